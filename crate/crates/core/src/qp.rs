//! Convex box-constrained quadratic programs
//! `min ½xᵀHx + cᵀx  s.t.  lo ≤ x ≤ hi` with `H` given as an operator.
//!
//! Projected gradient with the fixed step `1/L` is the backbone; after each
//! projected step a conjugate-gradient solve on the current free face
//! accelerates convergence (gradient projection plus subspace minimization).
//! Termination is on the sup-norm of the gradient mapping
//! `L·(x − P(x − ∇f/L))`.

use nalgebra::DVector;

use crate::error::{Error, Result};

pub struct BoxQp<'a> {
    pub hessian: &'a (dyn Fn(&DVector<f64>) -> DVector<f64> + Sync),
    pub linear: DVector<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl BoxQp<'_> {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn project(&self, x: &mut DVector<f64>) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lo[i], self.hi[i]);
        }
    }

    fn objective(&self, x: &DVector<f64>, hx: &DVector<f64>) -> f64 {
        0.5 * x.dot(hx) + self.linear.dot(x)
    }

    fn lipschitz(&self) -> f64 {
        let n = self.dim();
        let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.01 * (i % 7) as f64);
        let mut est = 0.0;
        for _ in 0..60 {
            let norm = v.norm();
            if norm == 0.0 {
                break;
            }
            v /= norm;
            let hv = (self.hessian)(&v);
            est = v.dot(&hv);
            v = hv;
        }
        // power iteration underestimates; pad so 1/L stays a safe step
        (1.1 * est).max(f64::MIN_POSITIVE.sqrt())
    }

    fn gradient_mapping(&self, x: &DVector<f64>, g: &DVector<f64>, l: f64) -> f64 {
        let mut r: f64 = 0.0;
        for i in 0..x.len() {
            let p = (x[i] - g[i] / l).clamp(self.lo[i], self.hi[i]);
            r = r.max((x[i] - p).abs() * l);
        }
        r
    }

    /// Conjugate gradients on `H_FF d = −g_F`, zero outside `free`.
    fn face_newton(&self, g: &DVector<f64>, free: &[bool]) -> DVector<f64> {
        let n = self.dim();
        let mask = |v: &mut DVector<f64>| {
            for i in 0..n {
                if !free[i] {
                    v[i] = 0.0;
                }
            }
        };
        let mut d = DVector::zeros(n);
        let mut r = -g.clone();
        mask(&mut r);
        let r0 = r.norm();
        if r0 == 0.0 {
            return d;
        }
        let mut p = r.clone();
        let mut rr = r.dot(&r);
        let nf = free.iter().filter(|&&f| f).count();
        for _ in 0..(2 * nf + 10) {
            let mut hp = (self.hessian)(&p);
            mask(&mut hp);
            let php = p.dot(&hp);
            if php <= 0.0 {
                break;
            }
            let a = rr / php;
            d.axpy(a, &p, 1.0);
            r.axpy(-a, &hp, 1.0);
            let rr_new = r.dot(&r);
            if rr_new.sqrt() <= 1e-15 * r0 {
                break;
            }
            p = &r + (rr_new / rr) * &p;
            rr = rr_new;
        }
        d
    }

    pub fn solve(&self, x0: Option<&DVector<f64>>, opts: QpOptions) -> Result<QpSolution> {
        let n = self.dim();
        if n == 0 {
            return Ok(QpSolution {
                x: DVector::zeros(0),
                objective: 0.0,
                iterations: 0,
                residual: 0.0,
            });
        }
        let l = self.lipschitz();
        let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
        self.project(&mut x);
        let mut hx = (self.hessian)(&x);
        let mut residual = f64::INFINITY;
        for it in 0..opts.max_iter {
            let g = &hx + &self.linear;
            residual = self.gradient_mapping(&x, &g, l);
            if residual <= opts.tol {
                return Ok(QpSolution {
                    objective: self.objective(&x, &hx),
                    x,
                    iterations: it,
                    residual,
                });
            }
            // projected gradient step with the fixed step 1/L
            let mut y = &x - &g / l;
            self.project(&mut y);
            let hy = (self.hessian)(&y);
            let fy = self.objective(&y, &hy);
            x = y;
            hx = hy;

            // subspace minimization on the face identified by the step
            let g = &hx + &self.linear;
            let free: Vec<bool> = (0..n)
                .map(|i| x[i] > self.lo[i] && x[i] < self.hi[i])
                .collect();
            if !free.iter().any(|&f| f) {
                continue;
            }
            let d = self.face_newton(&g, &free);
            let mut amax: f64 = 1.0;
            for i in 0..n {
                if d[i] > 0.0 {
                    amax = amax.min((self.hi[i] - x[i]) / d[i]);
                } else if d[i] < 0.0 {
                    amax = amax.min((self.lo[i] - x[i]) / d[i]);
                }
            }
            let mut best = (fy, None);
            let mut cands = vec![&x + amax.max(0.0) * &d];
            if amax < 1.0 {
                let mut full = &x + &d;
                self.project(&mut full);
                cands.push(full);
            }
            for mut c in cands {
                self.project(&mut c);
                let hc = (self.hessian)(&c);
                let fc = self.objective(&c, &hc);
                if fc < best.0 {
                    best = (fc, Some((c, hc)));
                }
            }
            if let (_, Some((c, hc))) = best {
                x = c;
                hx = hc;
            }
        }
        Err(Error::QpNotConverged {
            iterations: opts.max_iter,
            residual,
        })
    }
}

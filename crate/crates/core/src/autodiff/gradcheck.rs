//! Central finite-difference oracle for the analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Graph, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Maximum tolerated relative error.
    pub tol: f64,
    /// Tensors with more elements than this are checked on a random sample
    /// of this many coordinates.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            h: 1e-5,
            tol: 1e-4,
            max_coords: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Worst {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    /// Coordinates skipped because the step straddles a kink, detected as
    /// central differences at `h` and `h/2` that disagree by more than
    /// `tol / 10`.
    pub kinks_skipped: usize,
    pub worst: Option<Worst>,
    pub tol: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// Relative error between an analytic and a numeric derivative. The
/// denominator is floored at `floor` so that coordinates whose gradient is
/// negligible next to the rest of the tensor are judged on absolute error.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks `f` against central differences `(f(x+h e) - f(x-h e)) / 2h` for
/// every input tensor. Non-scalar outputs are reduced to a scalar through a
/// fixed random projection.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut projection: Option<Tensor<f64>> = None;

    let mut eval = |xs: &[Tensor<f64>], want_grads: bool, rng: &mut ChaCha8Rng| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::<f64>::checked();
        let vars = xs.iter().map(|t| g.param(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        let loss = if g.value(out).numel() == 1 {
            out
        } else {
            let proj = projection.get_or_insert_with(|| {
                let shape = g.shape(out).to_vec();
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
                Tensor::new(shape, data).expect("projection shape")
            });
            let p = g.constant(proj.clone())?;
            let prod = g.mul(out, p)?;
            g.sum(prod)
        };
        let value = g.value(loss).item();
        if !want_grads {
            return Ok((value, Vec::new()));
        }
        let grads = g.backward(loss)?;
        let out = vars
            .iter()
            .zip(xs)
            .map(|(&v, t)| grads.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect();
        Ok((value, out))
    };

    let (_, analytic) = eval(inputs, true, &mut rng)?;
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        coords_checked: 0,
        kinks_skipped: 0,
        worst: None,
        tol: opts.tol,
    };
    let mut xs = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        let n = t.numel();
        let coords: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.max_coords).into_vec()
        };
        let scale = analytic[ti].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = (1e-3 * scale).max(1e-10);
        for c in coords {
            let orig = t.data()[c];
            let mut probe = |step: f64, rng: &mut ChaCha8Rng| -> Result<(f64, f64)> {
                xs[ti].data_mut()[c] = orig + step;
                let (fp, _) = eval(&xs, false, rng)?;
                xs[ti].data_mut()[c] = orig - step;
                let (fm, _) = eval(&xs, false, rng)?;
                xs[ti].data_mut()[c] = orig;
                Ok((fp, fm))
            };
            let (fp, fm) = probe(opts.h, &mut rng)?;
            let numeric = (fp - fm) / (2.0 * opts.h);
            // On a smooth function the central difference barely moves when
            // the step is halved; when the step straddles a kink it does.
            let (fp2, fm2) = probe(0.5 * opts.h, &mut rng)?;
            let half = (fp2 - fm2) / opts.h;
            if rel_err(numeric, half, floor) > 0.1 * opts.tol {
                report.kinks_skipped += 1;
                continue;
            }
            let a = analytic[ti][c];
            let e = rel_err(a, numeric, floor);
            report.coords_checked += 1;
            if e > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(e);
                report.worst = Some(Worst {
                    input: ti,
                    coord: c,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

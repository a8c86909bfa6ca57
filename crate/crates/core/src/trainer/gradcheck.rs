use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnnotationSet, FrequentWordSet, END, START, UNK};
use crate::error::{Error, Result};
use crate::model::{CaptionGraph, CaptionModel, ModelConfig, Variant};
use crate::numerics::{finite_diff_grad, finite_diff_grad_five_point, relative_error, Gradients, ParamId, ParamStore, Tape};
use crate::objective::LossWeights;

/// Largest model the harness will probe coordinate by coordinate.
pub const MAX_GRADCHECK_SCALARS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub tolerance: f64,
    pub step: f64,
    /// Use the five-point stencil instead of plain central differences.
    pub five_point: bool,
    pub seed: u64,
    pub annotations: usize,
    pub caption_len: usize,
    pub weights: LossWeights,
    /// Half-width of the uniform draw for every parameter, biases included.
    pub param_range: f64,
    /// Doubles the analytic gradient of this tensor (harness self-test).
    pub corrupt: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            step: 1e-2,
            five_point: true,
            seed: 0,
            annotations: 4,
            caption_len: 5,
            weights: LossWeights::default(),
            param_range: 0.5,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub variant: String,
    pub name: String,
    pub numel: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub checks: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.max_rel_error <= self.tolerance)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.checks.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<15} {:<18} {:>6} {:>14}  status", "variant", "tensor", "size", "max_rel_err");
        for c in &self.checks {
            let ok = if c.max_rel_error <= self.tolerance { "ok" } else { "FAIL" };
            let _ = writeln!(
                s,
                "{:<15} {:<18} {:>6} {:>14.6e}  {ok}",
                c.variant, c.name, c.numel, c.max_rel_error
            );
        }
        let _ = writeln!(s, "tolerance={:e}", self.tolerance);
        let _ = writeln!(s, "result={}", if self.passed() { "pass" } else { "fail" });
        s
    }
}

/// Per-tensor `(name, size, max relative error)` between `analytic` and
/// `numeric`. Missing slots count as zero.
pub fn compare_gradients(
    params: &ParamStore<f64>,
    analytic: &Gradients<f64>,
    numeric: &Gradients<f64>,
    corrupt: Option<&str>,
) -> Vec<(String, usize, f64)> {
    params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let zeros = vec![0.0; p.value.len()];
            let a = analytic.get(ParamId(i)).unwrap_or(&zeros);
            let n = numeric.get(ParamId(i)).unwrap_or(&zeros);
            let factor = if corrupt == Some(p.name.as_str()) { 2.0 } else { 1.0 };
            let worst = a
                .iter()
                .zip(n)
                .map(|(a, n)| relative_error(a * factor, *n))
                .fold(0.0, f64::max);
            (p.name.clone(), p.value.len(), worst)
        })
        .collect()
}

/// Max-pool winners and active hinge pairs; the loss is smooth while this
/// stays fixed.
fn branch_signature(tape: &Tape<'_, f64>, graph: &CaptionGraph, positive: Option<&[bool]>) -> Vec<usize> {
    let mut sig = Vec::new();
    for &v in &graph.guides {
        sig.extend_from_slice(tape.winners(v).unwrap_or_default());
        if let Some(pos) = positive {
            let s = tape.value(v);
            for (sj, _) in s.iter().zip(pos).filter(|(_, p)| **p) {
                for (si, _) in s.iter().zip(pos).filter(|(_, p)| !**p) {
                    sig.push(usize::from(1.0 - (sj - si) > 0.0));
                }
            }
        }
    }
    sig
}

/// Checks the full training loss of `model` on one caption.
///
/// Coordinates whose probes cross a max-pool or hinge kink are re-probed
/// with a step ten times smaller, down to `1e-7`.
pub fn grad_check_model(
    model: &CaptionModel<f64>,
    ann: &AnnotationSet<f64>,
    caption: &[usize],
    positive: Option<&[bool]>,
    opts: &GradCheckOptions,
) -> Result<Vec<TensorCheck>> {
    let (_, analytic) = model.loss_and_grad(ann, caption, positive, opts.weights)?;
    let eval = |s: &ParamStore<f64>| -> Result<(f64, Vec<usize>)> {
        let mut tape = Tape::new(s);
        let g = model.forward(&mut tape, ann, caption, positive, opts.weights)?;
        Ok((tape.scalar(g.total), branch_signature(&tape, &g, positive)))
    };
    let base = eval(&model.params)?.1;
    let mut probe = model.params.clone();
    let mut numeric = Gradients::new(probe.len());
    for pi in 0..probe.len() {
        let id = ParamId(pi);
        let n = probe.get(id).value.len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut h = opts.step;
            loop {
                let mut single = ParamStore::new();
                let p = probe.get(id);
                let value = p.value[i];
                let name = p.name.clone();
                single.insert(&name, crate::numerics::Shape::Vector(1), p.kind, vec![value])?;
                let mut crossed = false;
                let loss = |s: &ParamStore<f64>| {
                    probe.get_mut(id).value[i] = s.get(ParamId(0)).value[0];
                    let (l, sig) = eval(&probe)?;
                    crossed |= sig != base;
                    Ok(l)
                };
                let g = if opts.five_point {
                    finite_diff_grad_five_point(loss, &mut single, h)?
                } else {
                    finite_diff_grad(loss, &mut single, h)?
                };
                probe.get_mut(id).value[i] = value;
                if !crossed || h < 1e-7 {
                    out.push(g.get(ParamId(0)).unwrap()[0]);
                    break;
                }
                h /= 10.0;
            }
        }
        *numeric.slot(id, n) = out;
    }
    let rows = compare_gradients(&probe, &analytic, &numeric, opts.corrupt.as_deref());
    Ok(rows
        .into_iter()
        .map(|(name, numel, max_rel_error)| TensorCheck {
            variant: model.config.variant.as_str().to_string(),
            name,
            numel,
            max_rel_error,
        })
        .collect())
}

/// Runs the harness on both variants of `base` with a random record and
/// caption, using oracle attributes and full discriminative supervision.
pub fn grad_check(base: &ModelConfig, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut checks = Vec::new();
    for variant in [Variant::SoftAttention, Variant::ReviewNet] {
        let cfg = ModelConfig {
            variant,
            guided: true,
            ..base.clone()
        };
        cfg.validate()?;
        let n = cfg.param_count();
        if n > MAX_GRADCHECK_SCALARS {
            return Err(Error::Config(format!(
                "{} model has {n} parameters; the gradient check probes each one and is limited to {MAX_GRADCHECK_SCALARS}",
                variant.as_str()
            )));
        }
        if cfg.vocab < UNK + 1 + cfg.attrs {
            return Err(Error::Config(format!(
                "vocabulary of {} is too small for {} frequent words",
                cfg.vocab, cfg.attrs
            )));
        }
        let mut model = CaptionModel::<f64>::new(cfg.clone(), opts.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9);
        for p in model.params.iter_mut() {
            p.value.iter_mut().for_each(|v| *v = rng.random_range(-opts.param_range..=opts.param_range));
        }
        let fws = FrequentWordSet::from_ids((UNK + 1..UNK + 1 + cfg.attrs).collect());
        let mut caption = vec![START];
        caption.extend((0..opts.caption_len.max(1)).map(|_| rng.random_range(UNK + 1..cfg.vocab)));
        caption.push(END);
        let positive = fws.membership(&caption);
        let items = (0..opts.annotations.max(1))
            .map(|_| (0..cfg.annot_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let attrs = positive.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect();
        let ann = AnnotationSet::new(vec![0.0; cfg.annot_dim], items, attrs)?;
        checks.extend(grad_check_model(&model, &ann, &caption, Some(&positive), opts)?);
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        checks,
    })
}

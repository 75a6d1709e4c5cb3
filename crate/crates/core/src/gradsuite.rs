//! Finite-difference checks of every differentiable operation and of the
//! full generator objective, in 64-bit precision.

use crate::error::Result;
use crate::nets::{discriminator_forward, generator_forward, init_discriminator, init_generator, DiscKind, GeneratorConfig, Variant};
use crate::objectives::{
    combine_adversarial, gan_loss_d, gan_loss_g, l1_loss, perceptual_loss, total_loss, AdversarialReduction, FeatureExtractor, LossParts,
    DEFAULT_WEIGHTS,
};
use crate::params::{Binder, ParamStore, NORM_EPS};
use crate::tensor::{concat_channels, finite_diff_grad, max_rel_error, Graph, SeedRng, Tensor, Var};
use crate::xing::{as_block, correlation_matrix, sa_block, AsBlockParams, FeatureCode, SaBlockParams};

pub const OP_TOLERANCE: f64 = 1e-5;
pub const END_TO_END_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-5;
/// Stencil widths tried per entry in the end-to-end check. The loss has
/// kinks (abs, ReLU); a stencil that straddles one is retried narrower.
const END_TO_END_STEPS: [f64; 2] = [1e-5, 1e-6];
/// Gradients below this magnitude are compared absolutely.
const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

type OpFn = dyn for<'g> Fn(&[Var<'g, f64>]) -> Result<Var<'g, f64>>;

/// Reduces the op output to a scalar through a fixed random projection so
/// every output element contributes a distinct weight.
fn projected<'g>(g: &'g Graph<f64>, out: Var<'g, f64>, proj: &Tensor<f64>) -> Result<Var<'g, f64>> {
    Ok(out.mul(g.constant(proj.clone()))?.sum())
}

fn check_op(name: &str, inputs: Vec<Tensor<f64>>, f: &OpFn, rng: &mut SeedRng) -> Result<GradCheck> {
    let probe = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
    let proj = rng.normal_tensor::<f64>(&f(&vars)?.shape(), 1.0);

    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
    projected(&g, f(&vars)?, &proj)?.backward()?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| v.grad().expect("leaf has a gradient")).collect();

    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let numeric = finite_diff_grad(
            |xk| {
                let g = Graph::new();
                let vars: Vec<_> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| g.constant(if j == k { xk.clone() } else { t.clone() }))
                    .collect();
                f(&vars)
                    .and_then(|out| projected(&g, out, &proj))
                    .map(|v| v.value().item())
                    .unwrap_or(f64::NAN)
            },
            x,
            EPS,
        );
        worst = worst.max(max_rel_error(&analytic[k], &numeric, FLOOR));
    }
    Ok(GradCheck {
        name: name.to_string(),
        max_rel_error: worst,
        tolerance: OP_TOLERANCE,
    })
}

/// Uniform values kept at least 0.1 away from zero, for ops with a kink there.
fn off_zero(rng: &mut SeedRng, shape: &[usize]) -> Tensor<f64> {
    rng.uniform_tensor::<f64>(shape, -1.0, 1.0)
        .map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

/// One check per differentiable operation.
pub fn op_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = SeedRng::derive(seed, 0x09);
    let mut out = Vec::new();
    let a23 = rng.uniform_tensor::<f64>(&[2, 3], -1.0, 1.0);
    let b23 = rng.uniform_tensor::<f64>(&[2, 3], -1.0, 1.0);
    let k = off_zero(&mut rng, &[2, 3]);
    let c3 = rng.uniform_tensor::<f64>(&[3, 3, 4], -1.0, 1.0);
    let c3b = rng.uniform_tensor::<f64>(&[2, 3, 4], -1.0, 1.0);
    let plane = rng.uniform_tensor::<f64>(&[1, 3, 4], -1.0, 1.0);
    let gain = rng.uniform_tensor::<f64>(&[1], 0.5, 1.5);
    let m34 = rng.uniform_tensor::<f64>(&[3, 4], -1.0, 1.0);
    let m42 = rng.uniform_tensor::<f64>(&[4, 2], -1.0, 1.0);
    let logits = rng.uniform_tensor::<f64>(&[3, 5], -2.0, 2.0);
    let x = rng.uniform_tensor::<f64>(&[2, 5, 4], -1.0, 1.0);
    let xb = rng.uniform_tensor::<f64>(&[3, 2, 5, 4], -1.0, 1.0);
    let w = rng.uniform_tensor::<f64>(&[3, 2, 3, 3], -0.5, 0.5);
    let bias = rng.uniform_tensor::<f64>(&[3], -0.5, 0.5);
    let wt = rng.uniform_tensor::<f64>(&[2, 3, 4, 4], -0.5, 0.5);
    let gamma = rng.uniform_tensor::<f64>(&[3], 0.5, 1.5);
    let beta = rng.uniform_tensor::<f64>(&[3], -0.5, 0.5);

    let cases: Vec<(&str, Vec<Tensor<f64>>, Box<OpFn>)> = vec![
        ("add", vec![a23.clone(), b23.clone()], Box::new(|v| v[0].add(v[1]))),
        ("sub", vec![a23.clone(), b23.clone()], Box::new(|v| v[0].sub(v[1]))),
        ("mul", vec![a23.clone(), b23.clone()], Box::new(|v| v[0].mul(v[1]))),
        ("scale", vec![a23.clone()], Box::new(|v| Ok(v[0].scale(-1.7)))),
        ("add_scalar", vec![a23.clone()], Box::new(|v| Ok(v[0].add_scalar(0.3)))),
        ("tanh", vec![a23.clone()], Box::new(|v| Ok(v[0].tanh()))),
        ("relu", vec![k.clone()], Box::new(|v| Ok(v[0].relu()))),
        ("leaky_relu", vec![k.clone()], Box::new(|v| Ok(v[0].leaky_relu(0.2)))),
        ("abs", vec![k.clone()], Box::new(|v| Ok(v[0].abs()))),
        ("sum", vec![a23.clone()], Box::new(|v| Ok(v[0].sum()))),
        ("mean", vec![a23.clone()], Box::new(|v| Ok(v[0].mean()))),
        ("reshape", vec![a23.clone()], Box::new(|v| v[0].reshape(&[3, 2]))),
        ("transpose", vec![a23.clone()], Box::new(|v| v[0].transpose())),
        ("slice_channels", vec![c3.clone()], Box::new(|v| v[0].slice_channels(1, 2))),
        ("concat_channels", vec![c3.clone(), c3b.clone()], Box::new(|v| concat_channels(&[v[0], v[1]]))),
        ("scale_by", vec![c3.clone(), gain], Box::new(|v| v[0].scale_by(v[1]))),
        ("mul_plane", vec![c3.clone(), plane], Box::new(|v| v[0].mul_plane(v[1]))),
        ("matmul", vec![m34, m42], Box::new(|v| v[0].matmul(v[1]))),
        ("softmax_rows", vec![logits], Box::new(|v| v[0].softmax_rows())),
        ("softmax_channels", vec![c3.clone()], Box::new(|v| v[0].softmax_channels())),
        (
            "conv2d",
            vec![x.clone(), w.clone(), bias.clone()],
            Box::new(|v| v[0].conv2d(v[1], Some(v[2]), 1, 1)),
        ),
        ("conv2d_strided", vec![x.clone(), w.clone()], Box::new(|v| v[0].conv2d(v[1], None, 2, 1))),
        (
            "conv2d_batched",
            vec![xb, w.clone(), bias.clone()],
            Box::new(|v| v[0].conv2d(v[1], Some(v[2]), 2, 1)),
        ),
        (
            "conv_transpose2d",
            vec![x.clone(), wt, bias],
            Box::new(|v| v[0].conv_transpose2d(v[1], Some(v[2]), 2, 1)),
        ),
        (
            "instance_norm",
            vec![c3.clone(), gamma, beta],
            Box::new(|v| v[0].instance_norm(v[1], v[2], NORM_EPS)),
        ),
        ("bce_with_logits_real", vec![a23.clone()], Box::new(|v| Ok(v[0].bce_with_logits(1.0)))),
        ("bce_with_logits_fake", vec![a23.clone()], Box::new(|v| Ok(v[0].bce_with_logits(0.0)))),
        ("gan_loss_d", vec![a23.clone(), b23.clone()], Box::new(|v| gan_loss_d(v[0], v[1]))),
        ("gan_loss_g", vec![a23.clone()], Box::new(|v| Ok(gan_loss_g(v[0])))),
        ("l1_loss", vec![a23.clone(), a23.map(|v| v + 0.25)], Box::new(|v| l1_loss(v[0], v[1]))),
    ];
    for (name, inputs, f) in cases {
        out.push(check_op(name, inputs, f.as_ref(), &mut rng)?);
    }

    let (c, h, w) = (2, 2, 3);
    let code = |rng: &mut SeedRng| rng.uniform_tensor::<f64>(&[c, h, w], -1.0, 1.0);
    let emb = |rng: &mut SeedRng| rng.uniform_tensor::<f64>(&[c, c, 1, 1], -1.0, 1.0);
    let (q, key) = (code(&mut rng), code(&mut rng));
    out.push(check_op(
        "correlation_matrix",
        vec![q, key],
        &|v| correlation_matrix(v[0], v[1]),
        &mut rng,
    )?);
    let sa_inputs = vec![
        code(&mut rng),
        code(&mut rng),
        emb(&mut rng),
        emb(&mut rng),
        emb(&mut rng),
        rng.uniform_tensor::<f64>(&[1], 0.5, 1.0),
    ];
    out.push(check_op(
        "sa_block",
        sa_inputs,
        &|v| {
            let p = SaBlockParams {
                conv_a: v[2],
                conv_b: v[3],
                conv_c: v[4],
                alpha: v[5],
            };
            Ok(sa_block(FeatureCode::appearance(v[0]), FeatureCode::shape(v[1]), &p)?.map)
        },
        &mut rng,
    )?);
    let as_inputs = vec![
        code(&mut rng),
        code(&mut rng),
        code(&mut rng),
        emb(&mut rng),
        emb(&mut rng),
        emb(&mut rng),
        rng.uniform_tensor::<f64>(&[1], 0.5, 1.0),
        rng.uniform_tensor::<f64>(&[c, 2 * c, 3, 3], -0.3, 0.3),
        rng.uniform_tensor::<f64>(&[c], -0.3, 0.3),
    ];
    out.push(check_op(
        "as_block",
        as_inputs,
        &|v| {
            let p = AsBlockParams {
                conv_d: v[3],
                conv_e: v[4],
                conv_h: v[5],
                beta: v[6],
                merge_weight: v[7],
                merge_bias: v[8],
            };
            Ok(as_block(
                FeatureCode::shape(v[0]),
                FeatureCode::appearance(v[1]),
                FeatureCode::appearance(v[2]),
                &p,
            )?
            .map)
        },
        &mut rng,
    )?);
    Ok(out)
}

/// Tiny-config inputs and parameters for the end-to-end check.
pub struct TinyProblem {
    pub config: GeneratorConfig,
    pub generator: ParamStore<f64>,
    pub discriminators: ParamStore<f64>,
    pub extractor: FeatureExtractor<f64>,
    pub source_image: Tensor<f64>,
    pub source_pose: Tensor<f64>,
    pub target_pose: Tensor<f64>,
    pub target_image: Tensor<f64>,
}

impl TinyProblem {
    /// T=1, N=2, c=8 on 16x8 images, with the attention gains set away
    /// from zero so every path carries gradient.
    pub fn new(seed: u64) -> Result<Self> {
        let config = GeneratorConfig::new(Variant::Full, 1, 2, 8)?;
        let mut rng = SeedRng::derive(seed, 0xE2E);
        let mut generator = init_generator::<f64>(&config, &mut rng)?;
        for name in ["gen.block0.sa.alpha", "gen.block0.as.beta"] {
            *generator.get_mut(name).expect("block gains exist") = Tensor::scalar(0.7);
        }
        let mut discriminators = init_discriminator::<f64>(DiscKind::Appearance, &mut rng);
        discriminators.extend(init_discriminator::<f64>(DiscKind::Shape, &mut rng));
        Ok(Self {
            config,
            generator,
            discriminators,
            extractor: FeatureExtractor::seeded(seed),
            source_image: rng.uniform_tensor(&[3, 16, 8], -1.0, 1.0),
            source_pose: rng.uniform_tensor(&[18, 16, 8], 0.0, 1.0),
            target_pose: rng.uniform_tensor(&[18, 16, 8], 0.0, 1.0),
            target_image: rng.uniform_tensor(&[3, 16, 8], -1.0, 1.0),
        })
    }

    /// Weighted generator objective with frozen discriminators.
    pub fn loss<'g>(&self, b: &Binder<'g, '_, f64>) -> Result<Var<'g, f64>> {
        let g = b.graph();
        let src = g.constant(self.source_image.clone());
        let tp = g.constant(self.target_pose.clone());
        let tgt = g.constant(self.target_image.clone());
        let fake = generator_forward(b, &self.config, src, g.constant(self.source_pose.clone()), tp)?.image;
        let d = Binder::new(g, &self.discriminators, false);
        let parts = LossParts {
            gan: combine_adversarial(
                gan_loss_g(discriminator_forward(&d, DiscKind::Appearance, src, fake)?),
                gan_loss_g(discriminator_forward(&d, DiscKind::Shape, tp, fake)?),
                AdversarialReduction::Mean,
            )?,
            l1: l1_loss(fake, tgt)?,
            perceptual: perceptual_loss(&self.extractor, fake, tgt)?,
        };
        total_loss(&parts, &DEFAULT_WEIGHTS)
    }

    pub fn loss_value(&self, generator: &ParamStore<f64>) -> Result<f64> {
        let g = Graph::new();
        let b = Binder::new(&g, generator, false);
        Ok(self.loss(&b)?.value().item())
    }
}

/// Compares analytic and central-difference gradients of the total loss
/// for `count` randomly chosen generator parameter entries.
pub fn end_to_end_check(seed: u64, count: usize) -> Result<GradCheck> {
    let problem = TinyProblem::new(seed)?;
    let g = Graph::new();
    let b = Binder::new(&g, &problem.generator, true);
    problem.loss(&b)?.backward()?;
    let grads = b.gradients();

    let names: Vec<String> = problem.generator.names().map(str::to_string).collect();
    let mut rng = SeedRng::derive(seed, 0x5A3);
    let mut worst = 0.0f64;
    let mut probe = problem.generator.clone();
    for _ in 0..count {
        let name = &names[rng.below(names.len())];
        let idx = rng.below(problem.generator.get(name).expect("listed").numel());
        let orig = probe.get(name).expect("listed").data()[idx];
        let mut eval_at = |v: f64| -> Result<f64> {
            probe.get_mut(name).expect("listed").data_mut()[idx] = v;
            problem.loss_value(&probe)
        };
        let analytic = grads.get(name).expect("listed").data()[idx];
        let mut rel = f64::INFINITY;
        for h in END_TO_END_STEPS {
            let numeric = (eval_at(orig + h)? - eval_at(orig - h)?) / (2.0 * h);
            rel = rel.min((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR));
            if rel <= END_TO_END_TOLERANCE {
                break;
            }
        }
        eval_at(orig)?;
        worst = worst.max(rel);
    }
    Ok(GradCheck {
        name: format!("end_to_end({count} params)"),
        max_rel_error: worst,
        tolerance: END_TO_END_TOLERANCE,
    })
}

/// All operation checks followed by the end-to-end check.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut out = op_checks(seed)?;
    out.push(end_to_end_check(seed, 20)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        for c in op_checks(7).unwrap() {
            assert!(c.passed(), "{}: {:e}", c.name, c.max_rel_error);
        }
    }
}

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wavegan::data::{AffineParams, AugmentDraw, AugmentKind};
use wavegan::gradcheck::{check_gradients, GradCheckConfig};
use wavegan::loss::{self, AttributeDelta, Side};
use wavegan::nn::{
    Bound, Classifier, ClassifierConfig, DiscKind, Discriminator, Generator, GeneratorConfig, SkipMode,
};
use wavegan::tensor::{ConvGeom, ReduceKind, Unary};
use wavegan::wavelet::{haar_pool_var, haar_unpool_var, high_band_stack_var, multi_level_pool_var};
use wavegan::{Graph, Result, Tensor, Var};

pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform<T: wavegan::Float>(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_f64(shape, &v).expect("shape")
}

/// Values bounded away from zero, for kinks and divisions.
pub fn away_from_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.random_range(0.2..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_f64(shape, &v).expect("shape")
}

/// Small steps keep probes from straddling activation kinks; the norm floor
/// absorbs rounding noise on gradients that are structurally zero (biases
/// feeding an instance norm).
fn cfg() -> GradCheckConfig {
    GradCheckConfig {
        step: 3e-6,
        max_probes: 32,
        norm_floor: 1e-6,
        ..GradCheckConfig::default()
    }
}

/// Weighted mean with a fixed random weight so every output entry matters.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = g.constant(uniform(g.shape(y), -1.0, 1.0, &mut rng(seed)));
    let p = g.mul(y, w)?;
    g.mean(p)
}

type Case = (String, Vec<Tensor<f64>>, Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>);

fn case(
    name: &str,
    inputs: Vec<Tensor<f64>>,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static,
) -> Case {
    (name.to_string(), inputs, Box::new(f))
}

fn op_cases() -> Vec<Case> {
    let mut r = rng(17);
    let a = uniform::<f64>(&[2, 3, 4, 4], -1.0, 1.0, &mut r);
    let b = uniform::<f64>(&[2, 3, 4, 4], -1.0, 1.0, &mut r);
    let chan = uniform::<f64>(&[1, 3, 1, 1], -1.0, 1.0, &mut r);
    let pos = uniform::<f64>(&[2, 3, 4, 4], 0.5, 2.0, &mut r);
    let kinked = away_from_zero(&[2, 3, 4, 4], &mut r);
    let img = uniform::<f64>(&[2, 4, 8, 8], -1.0, 1.0, &mut r);
    let mut cases = vec![
        case("add", vec![a.clone(), b.clone()], |g, v| {
            let y = g.add(v[0], v[1])?;
            project(g, y, 1)
        }),
        case("add_broadcast", vec![a.clone(), chan.clone()], |g, v| {
            let y = g.add(v[0], v[1])?;
            project(g, y, 2)
        }),
        case("sub", vec![a.clone(), b.clone()], |g, v| {
            let y = g.sub(v[0], v[1])?;
            project(g, y, 3)
        }),
        case("mul", vec![a.clone(), b.clone()], |g, v| {
            let y = g.mul(v[0], v[1])?;
            project(g, y, 4)
        }),
        case("mul_broadcast", vec![a.clone(), chan.clone()], |g, v| {
            let y = g.mul(v[0], v[1])?;
            project(g, y, 5)
        }),
        case("div", vec![a.clone(), pos.clone()], |g, v| {
            let y = g.div(v[0], v[1])?;
            project(g, y, 6)
        }),
        case("scale_offset", vec![a.clone()], |g, v| {
            let y = g.scale(v[0], -2.5)?;
            let y = g.offset(y, 0.75)?;
            project(g, y, 7)
        }),
    ];
    let unaries: Vec<(&str, Unary, Tensor<f64>)> = vec![
        ("leaky_relu", Unary::LeakyRelu(0.2), kinked.clone()),
        ("sigmoid", Unary::Sigmoid, a.clone()),
        ("tanh", Unary::Tanh, a.clone()),
        ("log", Unary::Log, pos.clone()),
        ("abs", Unary::Abs, kinked.clone()),
        ("softplus", Unary::Softplus, a.map(|x| 8.0 * x)),
        ("sqrt", Unary::Sqrt, pos.clone()),
        ("clamp", Unary::Clamp(-0.5, 0.5), kinked.map(|x| if x.abs() > 0.45 && x.abs() < 0.55 { x * 0.5 } else { x })),
    ];
    for (i, (name, kind, input)) in unaries.into_iter().enumerate() {
        cases.push(case(name, vec![input], move |g, v| {
            let y = g.unary(kind, v[0])?;
            project(g, y, 20 + i as u64)
        }));
    }
    for (name, kind) in [
        ("reduce_sum", ReduceKind::Sum),
        ("reduce_mean", ReduceKind::Mean),
        ("reduce_l1", ReduceKind::L1),
        ("reduce_l2sq", ReduceKind::L2Sq),
    ] {
        let input = if kind == ReduceKind::L1 { kinked.clone() } else { a.clone() };
        cases.push(case(&format!("{name}_all"), vec![input.clone()], move |g, v| {
            let y = g.reduce(v[0], kind, None)?;
            g.scale(y, 0.5)
        }));
        cases.push(case(&format!("{name}_axes"), vec![input], move |g, v| {
            let y = g.reduce(v[0], kind, Some(&[1, 3]))?;
            project(g, y, 40)
        }));
    }
    for (stride, pad, k) in [(1, 1, 3), (2, 1, 4), (2, 0, 2), (1, 0, 1), (2, 1, 3)] {
        let w = uniform::<f64>(&[5, 4, k, k], -0.5, 0.5, &mut r);
        let bias = uniform::<f64>(&[5], -0.5, 0.5, &mut r);
        let geom = ConvGeom::new(stride, pad);
        cases.push(case(
            &format!("conv2d_s{stride}_p{pad}_k{k}"),
            vec![img.clone(), w.clone(), bias],
            move |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), geom)?;
                project(g, y, 50)
            },
        ));
        let wt = uniform::<f64>(&[4, 3, k, k], -0.5, 0.5, &mut r);
        cases.push(case(&format!("transposed_conv2d_s{stride}_p{pad}_k{k}"), vec![img.clone(), wt], move |g, v| {
            let y = g.transposed_conv2d(v[0], v[1], geom)?;
            project(g, y, 51)
        }));
    }
    let wg = uniform::<f64>(&[4, 2, 3, 3], -0.5, 0.5, &mut r);
    cases.push(case("conv2d_grouped", vec![img.clone(), wg], |g, v| {
        let y = g.conv2d(v[0], v[1], None, ConvGeom::grouped(1, 1, 2))?;
        project(g, y, 52)
    }));
    let wd = uniform::<f64>(&[4, 1, 2, 2], -0.5, 0.5, &mut r);
    cases.push(case("conv2d_depthwise", vec![img.clone(), wd], |g, v| {
        let y = g.conv2d(v[0], v[1], None, ConvGeom::grouped(2, 0, 4))?;
        project(g, y, 53)
    }));
    cases.push(case("instance_norm", vec![img.clone()], |g, v| {
        let y = g.instance_norm(v[0], 1e-5)?;
        project(g, y, 60)
    }));
    cases.push(case("avg_pool2", vec![img.clone()], |g, v| {
        let y = g.avg_pool2(v[0])?;
        project(g, y, 61)
    }));
    cases.push(case("upsample2", vec![a.clone()], |g, v| {
        let y = g.upsample2(v[0])?;
        project(g, y, 62)
    }));
    cases.push(case("concat_slice", vec![a.clone(), b.clone()], |g, v| {
        let c = g.concat_channels(&[v[0], v[1]])?;
        let s = g.slice_channels(c, 2, 3)?;
        project(g, s, 63)
    }));
    cases.push(case("reshape", vec![a.clone()], |g, v| {
        let y = g.reshape(v[0], &[6, 16])?;
        project(g, y, 64)
    }));
    let wsn = uniform::<f64>(&[4, 3, 3, 3], -0.5, 0.5, &mut r);
    let u = uniform::<f64>(&[4], -1.0, 1.0, &mut r).into_data();
    let vv = uniform::<f64>(&[27], -1.0, 1.0, &mut r).into_data();
    cases.push(case("spectral_norm", vec![wsn], move |g, v| {
        let y = g.spectral_norm(v[0], &u, &vv)?;
        project(g, y, 65)
    }));
    let affine = AugmentDraw::affine(
        &[
            AffineParams {
                rotation_deg: 13.0,
                translate: (0.3, -0.7),
                scale: 1.1,
            },
            AffineParams {
                rotation_deg: -7.0,
                translate: (0.0, 0.4),
                scale: 0.95,
            },
        ],
        8,
        8,
    )
    .expect("affine");
    cases.push(case("warp_affine", vec![img.map(|x| 0.5 * x)], move |g, v| {
        let y = affine.apply_var(g, v[0])?;
        project(g, y, 66)
    }));
    for kind in [AugmentKind::HFlip, AugmentKind::noise(), AugmentKind::jitter()] {
        let shape = [2, 3, 8, 8];
        let draw = kind.draw(&mut rng(5), shape).expect("draw");
        let x = uniform::<f64>(&shape, -0.6, 0.6, &mut r);
        cases.push(case(&format!("augment_{}", kind.name()), vec![x], move |g, v| {
            let y = draw.apply_var(g, v[0])?;
            project(g, y, 67)
        }));
    }
    cases.push(case("haar_pool_unpool", vec![img.clone()], |g, v| {
        let bands = haar_pool_var(g, v[0])?;
        let hf = high_band_stack_var(g, &bands)?;
        let back = haar_unpool_var(g, &bands)?;
        let a = project(g, hf, 70)?;
        let b = project(g, back, 71)?;
        g.add(a, b)
    }));
    cases.push(case("multi_level_pool", vec![img.clone()], |g, v| {
        let levels = multi_level_pool_var(g, v[0], 2)?;
        let hf = high_band_stack_var(g, &levels[1])?;
        project(g, hf, 72)
    }));
    cases
}

fn loss_cases() -> Vec<Case> {
    let mut r = rng(23);
    let real = uniform::<f64>(&[4, 1], -2.0, 2.0, &mut r);
    let fake = uniform::<f64>(&[4, 1], -2.0, 2.0, &mut r);
    let x = uniform::<f64>(&[2, 3, 4, 4], -1.0, 1.0, &mut r);
    let xc = away_from_zero(&[2, 3, 4, 4], &mut r);
    let logits = uniform::<f64>(&[2, 3], -2.0, 2.0, &mut r);
    let feats = [
        uniform::<f64>(&[2, 6], 0.1, 1.0, &mut r),
        uniform::<f64>(&[2, 6], -1.0, 0.1, &mut r),
        uniform::<f64>(&[2, 6], -1.0, 1.0, &mut r),
    ];
    vec![
        case("loss_adv_discriminator", vec![real, fake.clone()], |g, v| {
            loss::adv_loss_image(g, Some(v[0]), v[1], Side::Discriminator)
        }),
        case("loss_adv_generator", vec![fake], |g, v| loss::adv_loss_highfreq(g, None, v[0], Side::Generator)),
        case("loss_cycle", vec![x.clone(), xc], |g, v| {
            let x_cyc = g.add(v[0], v[1])?;
            loss::cycle_loss(g, v[0], x_cyc)
        }),
        case("loss_attr_classification", vec![logits], |g, v| {
            let t = g.constant(Tensor::from_f64(&[2, 3], &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).expect("shape"));
            let m = g.constant(Tensor::from_f64(&[2, 3], &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0]).expect("shape"));
            loss::attr_classification_loss(g, v[0], t, m)
        }),
        case("loss_attr_regression", feats.to_vec(), |g, v| loss::attr_regression_loss(g, v[0], v[1], v[2], 1.4)),
    ]
}

fn network_cases() -> Vec<Case> {
    let mut r = rng(31);
    let mut cases = Vec::new();
    let x = uniform::<f64>(&[2, 3, 8, 8], -1.0, 1.0, &mut r);
    let cond = AttributeDelta::condition_tensor::<f64>(&[
        AttributeDelta::new(vec![1, 0, -1], 0.7).expect("delta"),
        AttributeDelta::new(vec![0, -1, 1], 1.6).expect("delta"),
    ])
    .expect("cond");
    for (i, skip) in [SkipMode::HighFreq, SkipMode::LowFreq, SkipMode::AllFreq, SkipMode::Vanilla, SkipMode::Off]
        .into_iter()
        .enumerate()
    {
        let width = 4 + 2 * (i % 3);
        let gen = Generator::<f64>::new(
            GeneratorConfig {
                width,
                num_attrs: 3,
                skip,
                output_tanh: true,
            },
            &mut r,
        )
        .expect("generator");
        let mut inputs = vec![x.clone(), cond.clone()];
        inputs.extend(gen.params.tensors().iter().cloned());
        cases.push(case(&format!("generator_{}_w{width}", skip.name()), inputs, move |g, v| {
            let b = Bound::from_vars(v[2..].to_vec());
            let y = gen.forward(g, &b, v[0], v[1])?;
            project(g, y, 80)
        }));
    }
    for (i, kind) in [DiscKind::I0, DiscKind::I1, DiscKind::H0, DiscKind::H1].into_iter().enumerate() {
        let width = [4, 6, 8, 4][i];
        let disc = Discriminator::<f64>::new(kind, width, 8, &mut r).expect("discriminator");
        let s = kind.input_size(8);
        let input = uniform::<f64>(&[2, kind.in_channels(), s, s], -1.0, 1.0, &mut r);
        let mut inputs = vec![input];
        inputs.extend(disc.params.tensors().iter().cloned());
        cases.push(case(&format!("discriminator_{}_w{width}", kind.name()), inputs, move |g, v| {
            let b = Bound::from_vars(v[1..].to_vec());
            let y = disc.forward(g, &b, v[0])?;
            project(g, y, 81)
        }));
    }
    let clf = Classifier::<f64>::new(
        ClassifierConfig {
            width: 4,
            num_attrs: 3,
            hidden: 6,
        },
        &mut r,
    )
    .expect("classifier");
    let mut inputs = vec![x.clone()];
    inputs.extend(clf.params.tensors().iter().cloned());
    cases.push(case("classifier_w4", inputs, move |g, v| {
        let b = Bound::from_vars(v[1..].to_vec());
        let out = clf.forward(g, &b, v[0])?;
        let a = project(g, out.logits, 82)?;
        let f = project(g, out.feature, 83)?;
        g.add(a, f)
    }));
    cases
}

/// Run one family of gradient checks; returns `(name, max relative error)`.
fn run(cases: Vec<Case>) -> Vec<(String, f64)> {
    cases
        .into_iter()
        .map(|(name, inputs, f)| {
            let report = check_gradients(&inputs, cfg(), |g, v| f(g, v)).unwrap_or_else(|e| panic!("{name}: {e}"));
            let worst = report.tensors.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error));
            let label = match worst {
                Some(t) if t.rel_error >= GRAD_TOL => format!("{name} (input {})", t.index),
                _ => name,
            };
            (label, report.max_rel_error())
        })
        .collect()
}

pub fn op_gradchecks() -> Vec<(String, f64)> {
    let mut out = run(op_cases());
    out.extend(run(loss_cases()));
    out
}

pub fn network_gradchecks() -> Vec<(String, f64)> {
    run(network_cases())
}

//! Embedded oracle and property suites, runnable from the CLI.
//!
//! The gradient oracle is central finite differences over freshly rebuilt
//! graphs; it never touches the backward pass it checks.

use crate::cmaes::{cma_init, CmaConfig};
use crate::dct::DctSubspace;
use crate::error::Result;
use crate::flow::{CondFlow, FlowLayout};
use crate::tensor::{NdArray, NodeId, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

/// Max elementwise relative error between the analytic gradient of
/// `build(inputs)` w.r.t. every input and central finite differences.
fn fd_max_rel_err(
    build: &dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
    inputs: &[NdArray],
) -> Result<f64> {
    let eval = |vals: &[NdArray]| -> Result<(Tape, Vec<NodeId>, NodeId)> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = vals.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = build(&mut tape, &ids)?;
        Ok((tape, ids, out))
    };
    let (tape, ids, out) = eval(inputs)?;
    let grads = tape.backward(out)?;
    let mut worst = 0.0f64;
    for (which, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(ids[which]);
        for elem in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[elem] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[elem] -= FD_STEP;
            let (tp, _, op) = eval(&plus)?;
            let (tm, _, om) = eval(&minus)?;
            let fd = (tp.value(op).item() - tm.value(om).item()) / (2.0 * FD_STEP);
            let a = analytic.data()[elem];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn randu(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> NdArray {
    let n: usize = shape.iter().product();
    NdArray::from_vec(
        shape.to_vec(),
        (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect(),
    )
    .unwrap()
}

/// Finite-difference gradient checks for every supported op, over `seeds`
/// random instances each. Returns one result per op.
pub fn gradcheck_all_ops(seeds: u64) -> Vec<CheckResult> {
    type Case = (
        &'static str,
        fn(&mut ChaCha8Rng) -> Vec<NdArray>,
        fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
    );
    let cases: Vec<Case> = vec![
        (
            "add",
            |rng| vec![randu(rng, &[3, 2], -2.0, 2.0), randu(rng, &[3, 2], -2.0, 2.0)],
            |t, ids| {
                let y = t.add(ids[0], ids[1])?;
                Ok(t.sum(y))
            },
        ),
        (
            "sub",
            |rng| vec![randu(rng, &[5], -2.0, 2.0), randu(rng, &[5], -2.0, 2.0)],
            |t, ids| {
                let y = t.sub(ids[0], ids[1])?;
                let sq = t.mul(y, y)?;
                Ok(t.sum(sq))
            },
        ),
        (
            "mul",
            |rng| vec![randu(rng, &[4], -2.0, 2.0), randu(rng, &[4], -2.0, 2.0)],
            |t, ids| {
                let y = t.mul(ids[0], ids[1])?;
                Ok(t.sum(y))
            },
        ),
        (
            "neg",
            |rng| vec![randu(rng, &[6], -2.0, 2.0)],
            |t, ids| {
                let y = t.neg(ids[0]);
                let e = t.exp(y);
                Ok(t.sum(e))
            },
        ),
        (
            "scale",
            |rng| vec![randu(rng, &[4], -2.0, 2.0)],
            |t, ids| {
                let y = t.scale(ids[0], -1.7);
                let e = t.tanh(y);
                Ok(t.sum(e))
            },
        ),
        (
            "add_scalar",
            |rng| vec![randu(rng, &[4], -2.0, 2.0)],
            |t, ids| {
                let y = t.add_scalar(ids[0], 0.6);
                let e = t.mul(y, y)?;
                Ok(t.sum(e))
            },
        ),
        (
            "tanh",
            |rng| vec![randu(rng, &[7], -2.0, 2.0)],
            |t, ids| {
                let y = t.tanh(ids[0]);
                Ok(t.sum(y))
            },
        ),
        (
            "exp",
            |rng| vec![randu(rng, &[5], -1.5, 1.5)],
            |t, ids| {
                let y = t.exp(ids[0]);
                Ok(t.sum(y))
            },
        ),
        (
            "log",
            |rng| vec![randu(rng, &[5], 0.3, 3.0)],
            |t, ids| {
                let y = t.log(ids[0]);
                Ok(t.sum(y))
            },
        ),
        (
            "relu",
            // Keep inputs away from the kink where the FD oracle is invalid.
            |rng| {
                let mut v = randu(rng, &[6], 0.2, 2.0);
                for (i, e) in v.data_mut().iter_mut().enumerate() {
                    if i % 2 == 0 {
                        *e = -*e;
                    }
                }
                vec![v]
            },
            |t, ids| {
                let y = t.relu(ids[0]);
                Ok(t.sum(y))
            },
        ),
        (
            "softplus",
            |rng| vec![randu(rng, &[6], -3.0, 3.0)],
            |t, ids| {
                let y = t.softplus(ids[0]);
                Ok(t.sum(y))
            },
        ),
        (
            "sum",
            |rng| vec![randu(rng, &[3, 3], -2.0, 2.0)],
            |t, ids| {
                let s = t.sum(ids[0]);
                let e = t.exp(s);
                Ok(t.reshape(e, &[])? )
            },
        ),
        (
            "max",
            // Distinct entries keep the argmax stable under the FD step.
            |rng| {
                let mut v = randu(rng, &[6], -2.0, 2.0);
                for (i, e) in v.data_mut().iter_mut().enumerate() {
                    *e += i as f64 * 0.1;
                }
                vec![v]
            },
            |t, ids| {
                let m = t.max(ids[0]);
                let e = t.exp(m);
                Ok(t.reshape(e, &[])?)
            },
        ),
        (
            "matmul",
            |rng| vec![randu(rng, &[3, 4], -1.0, 1.0), randu(rng, &[4, 2], -1.0, 1.0)],
            |t, ids| {
                let y = t.matmul(ids[0], ids[1])?;
                let sq = t.mul(y, y)?;
                Ok(t.sum(sq))
            },
        ),
        (
            "conv2d_valid",
            |rng| {
                vec![
                    randu(rng, &[2, 5, 5], -1.0, 1.0),
                    randu(rng, &[3, 2, 3, 3], -1.0, 1.0),
                ]
            },
            |t, ids| {
                let y = t.conv2d(ids[0], ids[1], 0)?;
                let sq = t.mul(y, y)?;
                Ok(t.sum(sq))
            },
        ),
        (
            "conv2d_same",
            |rng| {
                vec![
                    randu(rng, &[1, 4, 4], -1.0, 1.0),
                    randu(rng, &[2, 1, 3, 3], -1.0, 1.0),
                ]
            },
            |t, ids| {
                let y = t.conv2d(ids[0], ids[1], 1)?;
                let s = t.tanh(y);
                Ok(t.sum(s))
            },
        ),
        (
            "reshape",
            |rng| vec![randu(rng, &[2, 6], -2.0, 2.0)],
            |t, ids| {
                let y = t.reshape(ids[0], &[3, 4])?;
                let e = t.tanh(y);
                Ok(t.sum(e))
            },
        ),
        (
            "concat_split",
            |rng| vec![randu(rng, &[3], -2.0, 2.0), randu(rng, &[5], -2.0, 2.0)],
            |t, ids| {
                let joined = t.concat_axis0(&[ids[0], ids[1]])?;
                let (a, b) = t.split_axis0(joined, 2)?;
                let sa = t.sum(a);
                let sb = t.sum(b);
                let sb2 = t.mul(sb, sb)?;
                let total = t.add(sa, sb2)?;
                Ok(t.reshape(total, &[])?)
            },
        ),
        (
            "channel_scale",
            |rng| vec![randu(rng, &[3, 4], -2.0, 2.0), randu(rng, &[3], 0.3, 2.0)],
            |t, ids| {
                let y = t.channel_scale(ids[0], ids[1])?;
                let s = t.tanh(y);
                Ok(t.sum(s))
            },
        ),
        (
            "channel_bias",
            |rng| vec![randu(rng, &[3, 4], -2.0, 2.0), randu(rng, &[3], -1.0, 1.0)],
            |t, ids| {
                let y = t.channel_bias(ids[0], ids[1])?;
                let s = t.mul(y, y)?;
                Ok(t.sum(s))
            },
        ),
        (
            "matvec_dot",
            |rng| {
                vec![
                    randu(rng, &[3, 4], -1.0, 1.0),
                    randu(rng, &[4], -1.0, 1.0),
                    randu(rng, &[3], -1.0, 1.0),
                ]
            },
            |t, ids| {
                let y = t.matvec(ids[0], ids[1])?;
                t.dot(y, ids[2])
            },
        ),
        (
            "two_layer_network",
            |rng| {
                vec![
                    randu(rng, &[4, 6], -0.7, 0.7),
                    randu(rng, &[4], -0.5, 0.5),
                    randu(rng, &[2, 4], -0.7, 0.7),
                    randu(rng, &[6], -1.0, 1.0),
                ]
            },
            |t, ids| {
                let h = t.matvec(ids[0], ids[3])?;
                let h = t.add(h, ids[1])?;
                let h = t.tanh(h);
                let o = t.matvec(ids[2], h)?;
                let sq = t.mul(o, o)?;
                Ok(t.sum(sq))
            },
        ),
    ];

    cases
        .into_iter()
        .map(|(name, make, build)| {
            let mut worst = 0.0f64;
            let mut err = None;
            for seed in 0..seeds {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = make(&mut rng);
                match fd_max_rel_err(&build, &inputs) {
                    Ok(e) => worst = worst.max(e),
                    Err(e) => {
                        err = Some(e.to_string());
                        break;
                    }
                }
            }
            match err {
                Some(e) => CheckResult::new(name, false, e),
                None => CheckResult::new(
                    name,
                    worst < FD_TOL,
                    format!("max rel err {worst:.3e} over {seeds} seeds"),
                ),
            }
        })
        .collect()
}

/// Quick DCT properties: roundtrip, Parseval, r = 1 identity.
pub fn dct_suite() -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = 16;
    let sub = DctSubspace::new(d, 1.0, 1).unwrap();
    let p: Vec<f64> = (0..d * d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let coeffs = sub.dct2(&p);
    let back = sub.idct2(&coeffs);
    let rt = p
        .iter()
        .zip(&back)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let ep: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ec: f64 = coeffs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let reduced = sub.reduce(&coeffs);
    let identity = reduced == coeffs;
    vec![
        CheckResult::new("dct_roundtrip", rt < 1e-10, format!("max abs err {rt:.3e}")),
        CheckResult::new(
            "dct_parseval",
            (ep - ec).abs() < 1e-10,
            format!("norm gap {:.3e}", (ep - ec).abs()),
        ),
        CheckResult::new("dct_r1_identity", identity, "reduce at r=1 is identity".into()),
    ]
}

/// Quick flow properties: identity init, roundtrip, logdet antisymmetry.
pub fn flow_suite() -> Vec<CheckResult> {
    let layout = FlowLayout::new(2, 2, 8, 2, vec![6]).unwrap();
    let mut results = Vec::new();

    let flow = CondFlow::identity_init(layout.clone(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = randu(&mut rng, &[8], 0.0, 1.0);
    let z0 = NdArray::from_vec(
        layout.latent_shape(),
        (0..8).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    )
    .unwrap();
    let out = flow.forward(&x, &z0).unwrap();
    results.push(CheckResult::new(
        "flow_identity_init",
        out.eta.data() == z0.data() && out.logdet == 0.0,
        format!("logdet {}", out.logdet),
    ));

    let mut worst_rt = 0.0f64;
    let mut worst_ld = 0.0f64;
    for trial in 0..20 {
        let mut f = CondFlow::identity_init(layout.clone(), trial).unwrap();
        f.randomize(0.35, 100 + trial);
        let x = randu(&mut rng, &[8], 0.0, 1.0);
        let eta = NdArray::from_vec(
            layout.latent_shape(),
            (0..8).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        )
        .unwrap();
        let (z0, ld_inv) = f.inverse(&x, &eta).unwrap();
        let fwd = f.forward(&x, &z0).unwrap();
        worst_rt = worst_rt.max(fwd.eta.max_abs_diff(&eta));
        worst_ld = worst_ld.max((ld_inv + fwd.logdet).abs());
    }
    results.push(CheckResult::new(
        "flow_roundtrip",
        worst_rt < 1e-5,
        format!("max abs err {worst_rt:.3e}"),
    ));
    results.push(CheckResult::new(
        "flow_logdet_antisymmetry",
        worst_ld < 1e-8,
        format!("max |fwd+inv| {worst_ld:.3e}"),
    ));
    results
}

/// Quick CMA-ES sanity: sphere in dimension 5.
pub fn cma_suite() -> Vec<CheckResult> {
    let cfg = CmaConfig::with_sizes(5, 16, 8, 0.3).unwrap();
    let mut state = cma_init(cfg, &[2.0; 5]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut best = f64::INFINITY;
    for _ in 0..400 {
        let cands = state.ask(&mut rng);
        let fits: Vec<f64> = cands
            .iter()
            .map(|c| c.iter().map(|v| v * v).sum())
            .collect();
        for &f in &fits {
            best = best.min(f);
        }
        state.tell(&cands, &fits).unwrap();
        if best < 1e-10 {
            break;
        }
    }
    vec![CheckResult::new(
        "cma_sphere_dim5",
        best < 1e-8,
        format!("best {best:.3e}"),
    )]
}

/// Run every suite; the CLI prints one line per check.
pub fn run_all(grad_seeds: u64) -> Vec<CheckResult> {
    let mut all = gradcheck_all_ops(grad_seeds);
    all.extend(dct_suite());
    all.extend(flow_suite());
    all.extend(cma_suite());
    all
}

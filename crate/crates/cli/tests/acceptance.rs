//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use gram::autodiff::{grad_check, grad_pairs, Graph, Tensor, Var};
use gram::dataset::batch_iter;
use gram::instrument::speed_report;
use gram::model::{
    ce_encode, cf_predict, init_params, sequence_loss_from_steps, CeParams, CfParams, CfVariant,
    ModelConfig, ParamSet,
};
use gram::training::{
    accumulation_latency, verify_equivalence, EquivalenceReport, GramOptions, Latency,
    OptimizerConfig,
};
use gram::{train, Batch, Dataset, Item, Mode, RunConfig, TrainerState, UserSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_EPS: f64 = 1e-6;
const FD_TOL: f64 = 1e-5;
const CE_GRAD_TOL: f64 = 1e-8;
const TRAJECTORY_TOL: f64 = 1e-6;
const EQUIVALENCE_BUDGET: Duration = Duration::from_secs(120);
const LEARNING_BUDGET: Duration = Duration::from_secs(600);
const MEMORY_RATIO: f64 = 0.45;
const AUC_FLOOR: f64 = 0.75;
const ONE_EPOCH_SLACK: f64 = 0.02;
const CS_AUC_BAND: (f64, f64) = (0.45, 0.55);

type Criterion<'a> = Box<dyn FnOnce() -> Verdict + 'a>;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn main() -> ExitCode {
    let equivalence = catch_unwind(|| {
        let cfg = RunConfig::default();
        let ds = cfg.dataset().unwrap();
        let start = Instant::now();
        let report = verify_equivalence(&ds, &cfg.model, &cfg.verify, cfg.seeds().verify).unwrap();
        (report, start.elapsed(), cfg.verify.trajectory_steps)
    });
    let equivalence = equivalence.as_ref().ok();

    let criteria: Vec<(&str, Criterion)> = vec![
        (
            "1 proposition equivalence",
            Box::new(|| proposition(equivalence.unwrap())),
        ),
        (
            "2 trajectory equivalence",
            Box::new(|| trajectory(equivalence.unwrap())),
        ),
        ("3 gradient correctness", Box::new(gradient_correctness)),
        ("4 boost ratio counters", Box::new(boost_counters)),
        ("5 memory property", Box::new(memory)),
        ("6 learning sanity", Box::new(learning)),
        ("7 latency presets", Box::new(latency_presets)),
        ("8 disclosures", Box::new(disclosures)),
    ];

    let mut failed = 0;
    for (name, run) in criteria {
        let verdict = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|e| Verdict::new(false, format!("panicked: {}", panic_text(&e))));
        failed += usize::from(!verdict.pass);
        println!(
            "{} {name}: {}",
            if verdict.pass { "PASS" } else { "FAIL" },
            verdict.detail
        );
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn panic_text(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn proposition((report, elapsed, _): &(EquivalenceReport, Duration, usize)) -> Verdict {
    let dims: BTreeSet<usize> = report.trials.iter().map(|t| t.d).collect();
    let variants: BTreeSet<String> = report
        .trials
        .iter()
        .map(|t| format!("{:?}", t.cf_variant))
        .collect();
    let duplicated = report
        .trials
        .iter()
        .all(|t| t.unique_items < t.interactions);
    let pass = report.trials.len() >= 100
        && report.max_ce_grad_rel_err <= CE_GRAD_TOL
        && dims.iter().all(|d| [4, 8, 16].contains(d))
        && variants.len() == 2
        && duplicated
        && *elapsed < EQUIVALENCE_BUDGET;
    Verdict::new(
        pass,
        format!(
            "{} trials, d {dims:?}, variants {variants:?}, duplicates in every batch {duplicated}, \
             max CE grad rel err {:.3e} (tol {CE_GRAD_TOL:e}), {:.1}s",
            report.trials.len(),
            report.max_ce_grad_rel_err,
            elapsed.as_secs_f64()
        ),
    )
}

fn trajectory((report, elapsed, steps): &(EquivalenceReport, Duration, usize)) -> Verdict {
    let pass = *steps == 50
        && report.max_trajectory_rel_err_sgd <= TRAJECTORY_TOL
        && report.max_trajectory_rel_err_adam <= TRAJECTORY_TOL
        && *elapsed < EQUIVALENCE_BUDGET;
    Verdict::new(
        pass,
        format!(
            "{steps} steps, SGD {:.3e}, Adam {:.3e} (tol {TRAJECTORY_TOL:e}), {:.1}s with criterion 1",
            report.max_trajectory_rel_err_sgd,
            report.max_trajectory_rel_err_adam,
            elapsed.as_secs_f64()
        ),
    )
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::new(
        vec![r, c],
        (0..r * c).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

fn away_from_zero(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    let mut t = random(rng, r, c, 0.05, 2.0);
    for x in t.data_mut() {
        if rng.random_bool(0.5) {
            *x = -*x;
        }
    }
    t
}

/// `sum(out * w)`, with `w` reshaped to the output and truncated to its size.
fn weighted_sum(g: &mut Graph<f64>, out: Var, w: &Tensor<f64>) -> gram::Result<Var> {
    let shape = g.value(out).shape().to_vec();
    let n = g.value(out).numel();
    let w = g.constant(Tensor::new(shape, w.data()[..n].to_vec())?);
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

type Case = Box<dyn Fn(&mut ChaCha8Rng) -> f64>;

/// Worst relative error of one primitive over random shapes and inputs.
fn primitive_cases() -> Vec<(&'static str, Case)> {
    fn unary(op: fn(&mut Graph<f64>, Var) -> gram::Result<Var>, kink: bool) -> Case {
        Box::new(move |rng| {
            let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
            let x = if kink {
                away_from_zero(rng, r, c)
            } else {
                random(rng, r, c, -3.0, 3.0)
            };
            let w = random(rng, r, c, -1.0, 1.0);
            grad_check(
                |g, v| {
                    let o = op(g, v)?;
                    weighted_sum(g, o, &w)
                },
                &x,
                FD_EPS,
            )
            .unwrap()
        })
    }
    fn binary(op: fn(&mut Graph<f64>, Var, Var) -> gram::Result<Var>) -> Case {
        Box::new(move |rng| {
            let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
            let (x, y, w) = (
                random(rng, r, c, -2.0, 2.0),
                random(rng, r, c, -2.0, 2.0),
                random(rng, r, c, -1.0, 1.0),
            );
            let left = grad_check(
                |g, v| {
                    let o = g.constant(y.clone());
                    let z = op(g, v, o)?;
                    weighted_sum(g, z, &w)
                },
                &x,
                FD_EPS,
            );
            let right = grad_check(
                |g, v| {
                    let o = g.constant(x.clone());
                    let z = op(g, o, v)?;
                    weighted_sum(g, z, &w)
                },
                &y,
                FD_EPS,
            );
            left.unwrap().max(right.unwrap())
        })
    }
    fn axis_op(
        op: fn(&mut Graph<f64>, Var, usize) -> gram::Result<Var>,
        out: fn(usize, usize, usize) -> (usize, usize),
    ) -> Case {
        Box::new(move |rng| {
            let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
            let x = random(rng, r, c, -3.0, 3.0);
            (0..2)
                .map(|axis| {
                    let (orow, ocol) = out(r, c, axis);
                    let w = random(rng, orow, ocol, -1.0, 1.0);
                    grad_check(
                        |g, v| {
                            let o = op(g, v, axis)?;
                            weighted_sum(g, o, &w)
                        },
                        &x,
                        FD_EPS,
                    )
                    .unwrap()
                })
                .fold(0.0, f64::max)
        })
    }
    vec![
        ("add", binary(|g, a, b| g.add(a, b))),
        ("sub", binary(|g, a, b| g.sub(a, b))),
        ("mul", binary(|g, a, b| g.mul(a, b))),
        (
            "add_row",
            Box::new(|rng| {
                let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
                let (a, bias, w) = (
                    random(rng, r, c, -2.0, 2.0),
                    random(rng, 1, c, -2.0, 2.0),
                    random(rng, r, c, -1.0, 1.0),
                );
                let da = grad_check(
                    |g, v| {
                        let b = g.constant(bias.clone());
                        let o = g.add_row(v, b)?;
                        weighted_sum(g, o, &w)
                    },
                    &a,
                    FD_EPS,
                );
                let db = grad_check(
                    |g, v| {
                        let x = g.constant(a.clone());
                        let o = g.add_row(x, v)?;
                        weighted_sum(g, o, &w)
                    },
                    &bias,
                    FD_EPS,
                );
                da.unwrap().max(db.unwrap())
            }),
        ),
        (
            "scale",
            Box::new(|rng| {
                let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
                let (x, w, s) = (
                    random(rng, r, c, -2.0, 2.0),
                    random(rng, r, c, -1.0, 1.0),
                    rng.random_range(-3.0..3.0),
                );
                grad_check(
                    |g, v| {
                        let o = g.scale(v, s)?;
                        weighted_sum(g, o, &w)
                    },
                    &x,
                    FD_EPS,
                )
                .unwrap()
            }),
        ),
        ("sigmoid", unary(|g, a| g.sigmoid(a), false)),
        ("tanh", unary(|g, a| g.tanh(a), false)),
        ("relu", unary(|g, a| g.relu(a), true)),
        ("transpose", unary(|g, a| g.transpose(a), false)),
        ("sum", unary(|g, a| g.sum(a), false)),
        (
            "softmax",
            axis_op(|g, a, axis| g.softmax(a, axis), |r, c, _| (r, c)),
        ),
        (
            "mean_pool",
            axis_op(
                |g, a, axis| g.mean_pool(a, axis),
                |r, c, axis| if axis == 0 { (1, c) } else { (r, 1) },
            ),
        ),
        (
            "concat",
            Box::new(|rng| {
                let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
                let (x, other) = (random(rng, r, c, -2.0, 2.0), random(rng, r, c, -2.0, 2.0));
                (0..2)
                    .map(|axis| {
                        let shape = if axis == 0 { (2 * r, c) } else { (r, 2 * c) };
                        let w = random(rng, shape.0, shape.1, -1.0, 1.0);
                        grad_check(
                            |g, v| {
                                let o = g.constant(other.clone());
                                let z = g.concat(&[o, v], axis)?;
                                weighted_sum(g, z, &w)
                            },
                            &x,
                            FD_EPS,
                        )
                        .unwrap()
                    })
                    .fold(0.0, f64::max)
            }),
        ),
        (
            "gather",
            Box::new(|rng| {
                let (rows, d) = (rng.random_range(1..6), rng.random_range(1..5));
                let table = random(rng, rows, d, -2.0, 2.0);
                let ids: Vec<usize> = (0..rng.random_range(1..8))
                    .map(|_| rng.random_range(0..rows))
                    .collect();
                let w = random(rng, ids.len(), d, -1.0, 1.0);
                grad_check(
                    |g, v| {
                        let o = g.gather(v, &ids)?;
                        weighted_sum(g, o, &w)
                    },
                    &table,
                    FD_EPS,
                )
                .unwrap()
            }),
        ),
        (
            "matmul",
            Box::new(|rng| {
                let (m, k, n) = (
                    rng.random_range(1..5),
                    rng.random_range(1..5),
                    rng.random_range(1..5),
                );
                let (a, b, w) = (
                    random(rng, m, k, -2.0, 2.0),
                    random(rng, k, n, -2.0, 2.0),
                    random(rng, m, n, -1.0, 1.0),
                );
                let da = grad_check(
                    |g, v| {
                        let o = g.constant(b.clone());
                        let z = g.matmul(v, o)?;
                        weighted_sum(g, z, &w)
                    },
                    &a,
                    FD_EPS,
                );
                let db = grad_check(
                    |g, v| {
                        let o = g.constant(a.clone());
                        let z = g.matmul(o, v)?;
                        weighted_sum(g, z, &w)
                    },
                    &b,
                    FD_EPS,
                );
                da.unwrap().max(db.unwrap())
            }),
        ),
        (
            "bce_loss",
            Box::new(|rng| {
                let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
                let p = random(rng, r, c, 0.05, 0.95);
                let y = Tensor::new(
                    vec![r, c],
                    (0..r * c)
                        .map(|_| f64::from(rng.random_bool(0.5)))
                        .collect(),
                )
                .unwrap();
                grad_check(
                    |g, v| {
                        let l = g.constant(y.clone());
                        g.bce_loss(v, l)
                    },
                    &p,
                    FD_EPS,
                )
                .unwrap()
            }),
        ),
        (
            "mse_half",
            Box::new(|rng| {
                let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
                let (x, y) = (random(rng, r, c, -2.0, 2.0), random(rng, r, c, -2.0, 2.0));
                let dx = grad_check(
                    |g, v| {
                        let t = g.constant(y.clone());
                        g.mse_half(v, t)
                    },
                    &x,
                    FD_EPS,
                );
                let dy = grad_check(
                    |g, v| {
                        let t = g.constant(x.clone());
                        g.mse_half(t, v)
                    },
                    &y,
                    FD_EPS,
                );
                dx.unwrap().max(dy.unwrap())
            }),
        ),
    ]
}

fn model_configs() -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for cf_variant in [CfVariant::Recurrent, CfVariant::Attention] {
        for (d, d_ff, ce_layers, d_h) in [(4, 8, 1, 3), (8, 8, 2, 5), (16, 32, 1, 16)] {
            out.push(ModelConfig {
                d,
                d_ff,
                ce_layers,
                d_h,
                vocab: 23,
                max_token_len: 7,
                positional: ce_layers == 2,
                cf_variant,
            });
        }
    }
    out
}

const RESPONSES: [u8; 5] = [1, 0, 0, 1, 1];

fn encodings(d: usize) -> Vec<Tensor<f64>> {
    (0..5)
        .map(|i| {
            Tensor::new(
                vec![1, d],
                (0..d)
                    .map(|j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5)
                    .collect(),
            )
            .unwrap()
        })
        .collect()
}

/// Each encoding coordinate against the token embedding table.
fn ce_forward_error(cfg: &ModelConfig, ce: &CeParams<f64>) -> f64 {
    (0..cfg.d)
        .map(|coord| {
            grad_check(
                |g, v| {
                    let mut all = ce.bind_all(g, false);
                    all[0] = v;
                    let vars = ce.vars_from(all);
                    let enc = ce_encode(g, &vars, &[5, 17, 5, 2, 11])?;
                    let mut pick = vec![0.0; cfg.d];
                    pick[coord] = 1.0;
                    let pick = g.constant(Tensor::row(pick));
                    let one = g.mul(enc, pick)?;
                    g.sum(one)
                },
                &ce.token_embedding,
                FD_EPS,
            )
            .unwrap()
        })
        .fold(0.0, f64::max)
}

/// Predicted probability against the candidate encoding, for histories 1..5.
fn cf_forward_error(cfg: &ModelConfig, cf: &CfParams<f64>) -> f64 {
    let encs = encodings(cfg.d);
    (1..5)
        .map(|history| {
            grad_check(
                |g, v| {
                    let vars = cf.bind(g, false);
                    let hist: Vec<(Var, u8)> = encs[..history]
                        .iter()
                        .zip(RESPONSES)
                        .map(|(e, r)| (g.constant(e.clone()), r))
                        .collect();
                    cf_predict(g, &vars, &hist, v)
                },
                &encs[4],
                FD_EPS,
            )
            .unwrap()
        })
        .fold(0.0, f64::max)
}

/// Every parameter tensor of both modules. Returns the worst pure relative
/// error and whether all entries sit within `FD_TOL` once a 1e-9 absolute
/// floor for central-difference rounding is allowed.
fn parameter_sweep(ce: &CeParams<f64>, cf: &CfParams<f64>, d: usize) -> (f64, bool) {
    let mut worst = 0.0f64;
    let mut ok = true;
    let mut take = |pairs: Vec<(f64, f64)>| {
        for (a, n) in pairs {
            worst = worst.max((a - n).abs() / (a.abs() + n.abs() + 1e-12));
            ok &= (a - n).abs() <= FD_TOL * (a.abs() + n.abs()) + 1e-9;
        }
    };
    for (k, (_, t)) in ce.named().into_iter().enumerate() {
        take(
            grad_pairs(
                |g, v| {
                    let mut all = ce.bind_all(g, false);
                    all[k] = v;
                    let vars = ce.vars_from(all);
                    let a = ce_encode(g, &vars, &[3, 1, 4, 1, 5, 9, 2, 6, 5])?;
                    let b = ce_encode(g, &vars, &[22, 0])?;
                    let w = g.constant(Tensor::from_f64(vec![1, 2], &[0.7, -1.3]).unwrap());
                    let both = g.concat(&[a, b], 0)?;
                    let proj = g.matmul(w, both)?;
                    let t = g.tanh(proj)?;
                    g.sum(t)
                },
                t,
                FD_EPS,
            )
            .unwrap(),
        );
    }
    let encs = encodings(d);
    for (k, (_, t)) in cf.named().into_iter().enumerate() {
        take(
            grad_pairs(
                |g, v| {
                    let mut all = cf.bind_all(g, false);
                    all[k] = v;
                    let vars = cf.vars_from(all);
                    let steps: Vec<(Var, u8)> = encs
                        .iter()
                        .zip(RESPONSES)
                        .map(|(e, r)| (g.constant(e.clone()), r))
                        .collect();
                    sequence_loss_from_steps(g, &vars, &steps)
                },
                t,
                FD_EPS,
            )
            .unwrap(),
        );
    }
    (worst, ok)
}

fn gradient_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfd);
    let mut worst_primitive = ("", 0.0f64);
    let mut failing = Vec::new();
    let cases = primitive_cases();
    for (name, case) in &cases {
        let err = (0..20).map(|_| case(&mut rng)).fold(0.0, f64::max);
        if err > FD_TOL {
            failing.push(format!("{name} {err:.2e}"));
        }
        if err >= worst_primitive.1 {
            worst_primitive = (name, err);
        }
    }
    let (mut ce_err, mut cf_err, mut sweep_worst, mut sweep_ok) = (0.0f64, 0.0f64, 0.0f64, true);
    for cfg in model_configs() {
        let (ce, mut cf) = init_params::<f64>(&cfg, 31).unwrap();
        for t in cf.tensors_mut() {
            for (i, x) in t.data_mut().iter_mut().enumerate() {
                *x += 0.01 * ((i % 5) as f64 - 2.0);
            }
        }
        ce_err = ce_err.max(ce_forward_error(&cfg, &ce));
        cf_err = cf_err.max(cf_forward_error(&cfg, &cf));
        let (w, ok) = parameter_sweep(&ce, &cf, cfg.d);
        sweep_worst = sweep_worst.max(w);
        sweep_ok &= ok;
    }
    let pass = failing.is_empty() && ce_err <= FD_TOL && cf_err <= FD_TOL && sweep_ok;
    Verdict::new(
        pass,
        format!(
            "{} primitives x 20 cases, worst {} {:.2e}{}; CE forward {ce_err:.2e}, CF forward {cf_err:.2e} \
             (tol {FD_TOL:e}, eps {FD_EPS:e}); all parameters within tol plus 1e-9 floor: {sweep_ok} \
             (worst pure rel err {sweep_worst:.2e})",
            cases.len(),
            worst_primitive.0,
            worst_primitive.1,
            if failing.is_empty() { String::new() } else { format!(", failing {failing:?}") },
        ),
    )
}

fn figure_one() -> (Dataset, Batch) {
    let items = (0..5)
        .map(|i| Item {
            item_id: i,
            tokens: vec![1 + i as usize, 7, 30 + i as usize],
        })
        .collect();
    let seqs: [[u32; 4]; 3] = [[0, 1, 2, 3], [1, 2, 4, 1], [0, 3, 4, 2]];
    let users: Vec<UserSequence> = seqs
        .iter()
        .enumerate()
        .map(|(u, s)| UserSequence {
            user_id: u as u32,
            interactions: s.iter().map(|&i| (i, (i % 2) as u8)).collect(),
        })
        .collect();
    (
        Dataset::new(items, users.clone()).unwrap(),
        Batch::new(users),
    )
}

fn trainer(
    mode: Mode,
    model: &ModelConfig,
    ds: &Dataset,
    accumulation: usize,
) -> TrainerState<f64> {
    let (ce, cf) = init_params::<f64>(model, 5).unwrap();
    let opt = OptimizerConfig::sgd(1e-4);
    let gram = GramOptions {
        accumulation_steps: accumulation,
        ce_batch_size: Some(8),
        ce_epochs: 1,
        recompute_encodings: false,
    };
    TrainerState::new(mode, ce, cf, opt.clone(), opt, gram, ds, 6).unwrap()
}

fn stats_ratio(file: &str) -> f64 {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(file);
    let out = Command::new(env!("CARGO_BIN_EXE_gram"))
        .args(["stats", "--metadata"])
        .arg(path)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    v["epoch_boost_ratio"].as_f64().unwrap()
}

fn boost_counters() -> Verdict {
    let model = ModelConfig {
        d: 8,
        d_ff: 16,
        d_h: 8,
        ..Default::default()
    };
    let (fig, batch) = figure_one();
    let mut e2e = trainer(Mode::E2e, &model, &fig, 1);
    let mut gram = trainer(Mode::Gram, &model, &fig, 1);
    e2e.step(&batch, &fig).unwrap();
    gram.step(&batch, &fig).unwrap();
    let fig_ratio = speed_report(&e2e.counters, &gram.counters, 12, 5, true)
        .unwrap()
        .measured_call_ratio;

    let ds = RunConfig::default().dataset().unwrap();
    let cf_batch = 16;
    let steps = ds.users.len().div_ceil(cf_batch);
    let mut e2e = trainer(Mode::E2e, &model, &ds, 1);
    let mut gram = trainer(Mode::Gram, &model, &ds, steps);
    for t in [&mut e2e, &mut gram] {
        for b in batch_iter(&ds.users, cf_batch, 1) {
            t.step(&b, &ds).unwrap();
        }
        t.finish(&ds).unwrap();
    }
    let (interactions, items) = (ds.n_interactions() as u64, ds.touched_items().len() as u64);
    let desk = speed_report(&e2e.counters, &gram.counters, interactions, items, true).unwrap();
    let desk_ok = gram.counters.ce_forward_calls == items
        && e2e.counters.ce_forward_calls == interactions
        && desk.agrees;

    let published = [
        ("mind.json", "36.10", 2),
        ("toeic.json", "10096.9", 1),
        ("spanish.json", "60.45", 2),
    ];
    let mut stats_ok = true;
    let mut shown = Vec::new();
    for (file, expect, decimals) in published {
        let printed = format!("{:.*}", decimals, stats_ratio(file));
        stats_ok &= printed == expect;
        shown.push(format!("{} {printed}", file.trim_end_matches(".json")));
    }

    Verdict::new(
        fig_ratio == (12, 5) && desk_ok && stats_ok,
        format!(
            "figure-1 batch {}/{}; desk 1E GRAM forwards {} vs {items} items, E2E forwards {} vs {interactions} \
             interactions, ratio {}/{}; stats {}",
            fig_ratio.0,
            fig_ratio.1,
            gram.counters.ce_forward_calls,
            e2e.counters.ce_forward_calls,
            desk.measured_call_ratio.0,
            desk.measured_call_ratio.1,
            shown.join(", ")
        ),
    )
}

fn one_epoch_run(mode: Mode) -> gram::RunReport {
    let mut cfg = RunConfig::default();
    cfg.train.mode = mode;
    cfg.train.latency = Latency::OneEpoch;
    cfg.train.cf_batch_size = 4;
    cfg.train.ce_batch_size = 8;
    cfg.train.max_epochs = 1;
    let ds = cfg.dataset().unwrap();
    train::<f64>(&ds, &cfg).unwrap().report
}

fn memory() -> Verdict {
    let (e2e, gram) = (one_epoch_run(Mode::E2e), one_epoch_run(Mode::Gram));
    let (e, g) = (
        e2e.counters.activation_elements_peak,
        gram.counters.activation_elements_peak,
    );
    let ratio = g as f64 / e as f64;
    Verdict::new(
        ratio < MEMORY_RATIO,
        format!("cf_batch 4, ce_batch 8: GRAM-1E peak {g} / E2E peak {e} = {ratio:.4} (bound {MEMORY_RATIO})"),
    )
}

fn learning_config(mode: Mode, latency: Latency, seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        ..Default::default()
    };
    cfg.train.mode = mode;
    cfg.train.latency = latency;
    cfg.train.max_epochs = 50;
    cfg.train.patience = 10;
    cfg.train.optimizer_ce = OptimizerConfig::adam(3e-3);
    cfg.train.optimizer_cf = OptimizerConfig::adam(3e-3);
    cfg
}

fn run(cfg: &RunConfig) -> gram::RunReport {
    let ds = cfg.dataset().unwrap();
    train::<f64>(&ds, cfg).unwrap().report
}

fn learning() -> Verdict {
    let start = Instant::now();
    let seed = RunConfig::default().seed;
    let e2e = run(&learning_config(Mode::E2e, Latency::OneStep, seed));
    let one_step = run(&learning_config(Mode::Gram, Latency::OneStep, seed));
    let one_epoch = run(&learning_config(Mode::Gram, Latency::OneEpoch, seed));
    let frozen = run(&learning_config(Mode::NoFinetune, Latency::OneStep, seed));
    let no_content: Vec<f64> = (0..8)
        .map(|s| {
            run(&learning_config(Mode::NoContent, Latency::OneStep, s))
                .test
                .cs_auc
                .unwrap()
        })
        .collect();
    let elapsed = start.elapsed();

    let auc = |r: &gram::RunReport| r.test.auc.unwrap();
    let cs_mean = no_content.iter().sum::<f64>() / no_content.len() as f64;
    let checks = [
        auc(&e2e) >= AUC_FLOOR && e2e.epochs.len() <= 50,
        auc(&one_step) >= AUC_FLOOR && one_step.epochs.len() <= 50,
        auc(&one_epoch) >= auc(&e2e) - ONE_EPOCH_SLACK,
        (CS_AUC_BAND.0..=CS_AUC_BAND.1).contains(&cs_mean),
        auc(&frozen) < auc(&one_step),
        elapsed < LEARNING_BUDGET,
    ];
    let per_seed: Vec<String> = no_content.iter().map(|v| format!("{v:.3}")).collect();
    Verdict::new(
        checks.iter().all(|&c| c),
        format!(
            "test AUC E2E {:.4}, GRAM-1S {:.4}, GRAM-1E {:.4} (floor {:.4}), NoFinetune {:.4}; \
             NoContent CSAUC mean {cs_mean:.4} over seeds 0-7 [{}]; {:.1}s",
            auc(&e2e),
            auc(&one_step),
            auc(&one_epoch),
            auc(&e2e) - ONE_EPOCH_SLACK,
            auc(&frozen),
            per_seed.join(" "),
            elapsed.as_secs_f64()
        ),
    )
}

fn latency_presets() -> Verdict {
    let got: Vec<usize> = ["1S", "10S", "0.5E", "1E"]
        .iter()
        .map(|p| accumulation_latency(p, 37).unwrap())
        .collect();
    Verdict::new(
        got == [1, 10, 19, 37],
        format!("steps_per_epoch 37 -> {got:?}"),
    )
}

fn disclosures() -> Verdict {
    let (e2e, gram) = (one_epoch_run(Mode::E2e), one_epoch_run(Mode::Gram));
    let w = gram.windows;
    let s = speed_report(
        &e2e.counters,
        &gram.counters,
        w.interactions,
        w.window_unique_items,
        true,
    )
    .unwrap();
    Verdict::new(
        s.agrees,
        format!(
            "call ratio {}/{} equals R {}/{}; wall clock (reported only) GRAM-1E {:.1} ms vs E2E {:.1} ms",
            s.measured_call_ratio.0,
            s.measured_call_ratio.1,
            s.theoretical_r.0,
            s.theoretical_r.1,
            s.gram_wall_clock_ns as f64 / 1e6,
            s.e2e_wall_clock_ns as f64 / 1e6
        ),
    )
}

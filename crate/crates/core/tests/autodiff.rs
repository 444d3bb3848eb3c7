use gram::autodiff::{grad_check, Graph, Tensor, Var};
use gram::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-5;
const CASES: u64 = 100;

fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn away_from_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let mut t = random(rng, shape, 0.05, 2.0);
    for x in t.data_mut() {
        if rng.random_bool(0.5) {
            *x = -*x;
        }
    }
    t
}

/// `sum(out * w)` with fixed random weights, so every output entry matters.
fn weighted_sum(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = g.value(out).shape().to_vec();
    let w = random(&mut ChaCha8Rng::seed_from_u64(seed), shape, -1.0, 1.0);
    let w = g.constant(w);
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5))
}

/// Run `case` on 100 random inputs and return the worst relative error.
fn check<F>(name: &str, mut case: F)
where
    F: FnMut(&mut ChaCha8Rng, u64) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(0xad);
    let worst = (0..CASES).map(|k| case(&mut rng, k)).fold(0.0, f64::max);
    assert!(worst <= TOL, "{name}: max relative error {worst:e}");
}

#[test]
fn add_sub_mul_match_finite_differences() {
    for op in ["add", "sub", "mul"] {
        check(op, |rng, k| {
            let (r, c) = dims(rng);
            let x = random(rng, vec![r, c], -2.0, 2.0);
            let other = random(rng, vec![r, c], -2.0, 2.0);
            grad_check(
                |g, v| {
                    let o = g.constant(other.clone());
                    let out = match op {
                        "add" => g.add(v, o)?,
                        "sub" => g.sub(o, v)?,
                        _ => g.mul(v, o)?,
                    };
                    weighted_sum(g, out, k)
                },
                &x,
                EPS,
            )
            .unwrap()
        });
    }
}

#[test]
fn add_row_and_scale() {
    check("add_row bias", |rng, k| {
        let (r, c) = dims(rng);
        let a = random(rng, vec![r, c], -2.0, 2.0);
        let bias = random(rng, vec![1, c], -2.0, 2.0);
        grad_check(
            |g, v| {
                let a = g.constant(a.clone());
                let out = g.add_row(a, v)?;
                weighted_sum(g, out, k)
            },
            &bias,
            EPS,
        )
        .unwrap()
    });
    check("scale", |rng, k| {
        let (r, c) = dims(rng);
        let x = random(rng, vec![r, c], -2.0, 2.0);
        let s = rng.random_range(-3.0..3.0);
        grad_check(
            |g, v| {
                let out = g.scale(v, s)?;
                weighted_sum(g, out, k)
            },
            &x,
            EPS,
        )
        .unwrap()
    });
}

#[test]
fn elementwise_nonlinearities() {
    for op in ["sigmoid", "tanh", "relu"] {
        check(op, |rng, k| {
            let (r, c) = dims(rng);
            let x = away_from_zero(rng, vec![r, c]);
            grad_check(
                |g, v| {
                    let out = match op {
                        "sigmoid" => g.sigmoid(v)?,
                        "tanh" => g.tanh(v)?,
                        _ => g.relu(v)?,
                    };
                    weighted_sum(g, out, k)
                },
                &x,
                EPS,
            )
            .unwrap()
        });
    }
}

#[test]
fn softmax_both_axes() {
    for axis in [0, 1] {
        check("softmax", |rng, k| {
            let (r, c) = dims(rng);
            let x = random(rng, vec![r, c], -3.0, 3.0);
            grad_check(
                |g, v| {
                    let out = g.softmax(v, axis)?;
                    weighted_sum(g, out, k)
                },
                &x,
                EPS,
            )
            .unwrap()
        });
    }
}

#[test]
fn concat_and_mean_pool() {
    for axis in [0, 1] {
        check("concat", |rng, k| {
            let (r, c) = dims(rng);
            let x = random(rng, vec![r, c], -2.0, 2.0);
            let other = if axis == 0 {
                random(rng, vec![2, c], -1.0, 1.0)
            } else {
                random(rng, vec![r, 3], -1.0, 1.0)
            };
            grad_check(
                |g, v| {
                    let o = g.constant(other.clone());
                    let out = g.concat(&[o, v, v], axis)?;
                    weighted_sum(g, out, k)
                },
                &x,
                EPS,
            )
            .unwrap()
        });
        check("mean_pool", |rng, k| {
            let (r, c) = dims(rng);
            let x = random(rng, vec![r, c], -2.0, 2.0);
            grad_check(
                |g, v| {
                    let out = g.mean_pool(v, axis)?;
                    weighted_sum(g, out, k)
                },
                &x,
                EPS,
            )
            .unwrap()
        });
    }
}

#[test]
fn gather_with_repeats() {
    check("gather", |rng, k| {
        let (r, c) = dims(rng);
        let table = random(rng, vec![r, c], -2.0, 2.0);
        let ids: Vec<usize> = (0..rng.random_range(1..7))
            .map(|_| rng.random_range(0..r))
            .collect();
        grad_check(
            |g, v| {
                let out = g.gather(v, &ids)?;
                weighted_sum(g, out, k)
            },
            &table,
            EPS,
        )
        .unwrap()
    });
}

#[test]
fn matmul_both_operands_and_transpose() {
    check("matmul lhs", |rng, k| {
        let (r, c) = dims(rng);
        let x = random(rng, vec![r, c], -2.0, 2.0);
        let w = random(rng, vec![c, 3], -2.0, 2.0);
        grad_check(
            |g, v| {
                let w = g.constant(w.clone());
                let out = g.matmul(v, w)?;
                weighted_sum(g, out, k)
            },
            &x,
            EPS,
        )
        .unwrap()
    });
    check("matmul rhs", |rng, k| {
        let (r, c) = dims(rng);
        let a = random(rng, vec![3, r], -2.0, 2.0);
        let x = random(rng, vec![r, c], -2.0, 2.0);
        grad_check(
            |g, v| {
                let a = g.constant(a.clone());
                let out = g.matmul(a, v)?;
                weighted_sum(g, out, k)
            },
            &x,
            EPS,
        )
        .unwrap()
    });
    check("transpose", |rng, k| {
        let (r, c) = dims(rng);
        let x = random(rng, vec![r, c], -2.0, 2.0);
        grad_check(
            |g, v| {
                let out = g.transpose(v)?;
                weighted_sum(g, out, k)
            },
            &x,
            EPS,
        )
        .unwrap()
    });
}

#[test]
fn losses() {
    check("bce", |rng, _| {
        let n = rng.random_range(1..6);
        let p = random(rng, vec![n, 1], 0.05, 0.95);
        let y = Tensor::new(
            vec![n, 1],
            (0..n).map(|_| rng.random_range(0..2) as f64).collect(),
        )
        .unwrap();
        grad_check(
            |g, v| {
                let y = g.constant(y.clone());
                g.bce_loss(v, y)
            },
            &p,
            EPS,
        )
        .unwrap()
    });
    check("mse_half", |rng, _| {
        let (r, c) = dims(rng);
        let a = random(rng, vec![r, c], -2.0, 2.0);
        let b = random(rng, vec![r, c], -2.0, 2.0);
        grad_check(
            |g, v| {
                let b = g.constant(b.clone());
                g.mse_half(b, v)
            },
            &a,
            EPS,
        )
        .unwrap()
    });
    check("sum", |rng, _| {
        let (r, c) = dims(rng);
        let x = random(rng, vec![r, c], -2.0, 2.0);
        grad_check(
            |g, v| {
                let t = g.tanh(v)?;
                g.sum(t)
            },
            &x,
            EPS,
        )
        .unwrap()
    });
}

fn grad_of(x: &Tensor<f64>, f: impl Fn(&mut Graph<f64>, Var) -> Result<Var>) -> Tensor<f64> {
    let mut g = Graph::new();
    let v = g.input(x.clone(), true);
    let out = f(&mut g, v).unwrap();
    g.backward(out).unwrap().get(v).cloned().unwrap()
}

proptest! {
    #[test]
    fn gradient_is_linear_in_the_loss(
        xs in prop::collection::vec(-2.0f64..2.0, 6),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let x = Tensor::new(vec![2, 3], xs).unwrap();
        let w = Tensor::from_f64(vec![3, 2], &[0.3, -0.1, 0.7, 0.2, -0.5, 0.4]).unwrap();
        let f = |g: &mut Graph<f64>, v: Var| -> Result<Var> { let t = g.tanh(v)?; g.sum(t) };
        let h = |g: &mut Graph<f64>, v: Var| -> Result<Var> {
            let w = g.constant(w.clone());
            let m = g.matmul(v, w)?;
            let s = g.sigmoid(m)?;
            g.sum(s)
        };
        let combined = grad_of(&x, |g, v| {
            let a = f(g, v)?;
            let a = g.scale(a, alpha)?;
            let b = h(g, v)?;
            let b = g.scale(b, beta)?;
            g.add(a, b)
        });
        let gf = grad_of(&x, f);
        let gh = grad_of(&x, h);
        for k in 0..6 {
            let expect = alpha * gf.data()[k] + beta * gh.data()[k];
            prop_assert!((combined.data()[k] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn gather_conserves_gradient_mass(
        ids in prop::collection::vec(0usize..5, 1..20),
        cols in 1usize..4,
    ) {
        let table = Tensor::<f64>::full(vec![5, cols], 0.5);
        let grad = grad_of(&table, |g, v| { let r = g.gather(v, &ids)?; g.sum(r) });
        let total: f64 = grad.data().iter().sum();
        prop_assert_eq!(total, (ids.len() * cols) as f64);
        for row in 0..5 {
            let count = ids.iter().filter(|&&i| i == row).count() as f64;
            prop_assert!(grad.data()[row * cols..(row + 1) * cols].iter().all(|&x| x == count));
        }
    }
}

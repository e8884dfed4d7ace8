//! Every tape primitive against a loop-written reference (forward) and
//! against central finite differences (vector-Jacobian product).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stepcast::autodiff::{Float, Tape, Tensor, Var, LAYER_NORM_EPS};

type Build<'a, T> = dyn Fn(&mut Tape<T>, &[Var]) -> Var + 'a;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.5..1.5))
}

/// Value of `sum(f(inputs) * r)`.
fn projected<T: Float>(build: &Build<'_, T>, inputs: &[Tensor<T>], r: &[f64]) -> f64 {
    let mut tape = Tape::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.value(out)
        .data()
        .iter()
        .zip(r)
        .map(|(a, b)| a.as_f64() * b)
        .sum()
}

/// Checks the tape VJP of `build` against central differences in f64.
fn check_vjp(name: &str, build: &Build<'_, f64>, inputs: Vec<Tensor<f64>>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let r: Vec<f64> = (0..tape.value(out).numel())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let rv = tape.constant(Tensor::new(tape.shape(out).to_vec(), r.clone()).unwrap());
    let prod = tape.mul(out, rv).unwrap();
    let loss = tape.sum(prod).unwrap();
    let grads = tape.grad(loss, &vars).unwrap();

    let h = 1e-5;
    for (which, input) in inputs.iter().enumerate() {
        for e in 0..input.numel() {
            let mut plus = inputs.clone();
            plus[which].data_mut()[e] += h;
            let mut minus = inputs.clone();
            minus[which].data_mut()[e] -= h;
            let fd = (projected(build, &plus, &r) - projected(build, &minus, &r)) / (2.0 * h);
            let an = grads[which].data()[e];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            assert!(
                rel < 1e-4,
                "{name}: input {which} element {e}: analytic {an} vs finite difference {fd}"
            );
        }
    }
}

fn close(name: &str, got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len(), "{name}: length");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol * w.abs().max(1.0), "{name}[{i}]: {g} vs {w}");
    }
}

// --- loop references -------------------------------------------------------

fn ref_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.data()[i * k + p] * b.data()[p * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

fn ref_softmax(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for row in x.chunks(n) {
        let m = row.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

fn ref_layer_norm(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for row in x.chunks(n) {
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        out.extend(row.iter().map(|v| (v - mean) / (var + LAYER_NORM_EPS).sqrt()));
    }
    out
}

fn ref_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn ref_attention(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>, heads: usize) -> Vec<f64> {
    let (tq, d) = (q.shape()[0], q.shape()[1]);
    let tk = k.shape()[0];
    let dh = d / heads;
    let mut out = vec![0.0; tq * d];
    for h in 0..heads {
        for i in 0..tq {
            let mut scores = vec![0.0; tk];
            for (j, s) in scores.iter_mut().enumerate() {
                for c in 0..dh {
                    *s += q.data()[i * d + h * dh + c] * k.data()[j * d + h * dh + c];
                }
                *s /= (dh as f64).sqrt();
            }
            let p = ref_softmax(&scores, tk);
            for c in 0..dh {
                out[i * d + h * dh + c] = (0..tk).map(|j| p[j] * v.data()[j * d + h * dh + c]).sum();
            }
        }
    }
    out
}

fn forward_f64(build: &Build<'_, f64>, inputs: &[Tensor<f64>]) -> Vec<f64> {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.value(out).data().to_vec()
}

fn forward_f32(build: &Build<'_, f32>, inputs: &[Tensor<f64>]) -> Vec<f64> {
    let mut tape = Tape::<f32>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.cast())).collect();
    let out = build(&mut tape, &vars);
    tape.value(out).data().iter().map(|&x| x as f64).collect()
}

/// Reference inputs are rounded to f32 first so both precisions see the
/// same numbers.
fn rounded(t: Tensor<f64>) -> Tensor<f64> {
    t.cast::<f32>().cast::<f64>()
}

macro_rules! both {
    ($name:expr, $inputs:expr, $reference:expr, |$tape:ident, $v:ident| $body:expr) => {{
        let inputs: Vec<Tensor<f64>> = $inputs.into_iter().map(rounded).collect();
        let want: Vec<f64> = $reference(&inputs);
        let b64: &Build<'_, f64> = &|$tape: &mut Tape<f64>, $v: &[Var]| $body;
        let b32: &Build<'_, f32> = &|$tape: &mut Tape<f32>, $v: &[Var]| $body;
        close($name, &forward_f64(b64, &inputs), &want, 1e-12);
        close($name, &forward_f32(b32, &inputs), &want, 1e-6);
        check_vjp($name, b64, inputs, 99);
    }};
}

#[test]
fn primitives_match_references_and_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for round in 0..3 {
        let (m, k, n) = (2 + round, 3 + round, 4);

        both!("matmul", vec![random(&mut rng, &[m, k]), random(&mut rng, &[k, n])],
            |x: &[Tensor<f64>]| ref_matmul(&x[0], &x[1]),
            |t, v| t.matmul(v[0], v[1]).unwrap());

        both!("add", vec![random(&mut rng, &[m, n]), random(&mut rng, &[m, n])],
            |x: &[Tensor<f64>]| x[0].data().iter().zip(x[1].data()).map(|(a, b)| a + b).collect(),
            |t, v| t.add(v[0], v[1]).unwrap());

        both!("sub", vec![random(&mut rng, &[m, n]), random(&mut rng, &[m, n])],
            |x: &[Tensor<f64>]| x[0].data().iter().zip(x[1].data()).map(|(a, b)| a - b).collect(),
            |t, v| t.sub(v[0], v[1]).unwrap());

        both!("mul", vec![random(&mut rng, &[m, n]), random(&mut rng, &[m, n])],
            |x: &[Tensor<f64>]| x[0].data().iter().zip(x[1].data()).map(|(a, b)| a * b).collect(),
            |t, v| t.mul(v[0], v[1]).unwrap());

        both!("add_row", vec![random(&mut rng, &[m, n]), random(&mut rng, &[n])],
            |x: &[Tensor<f64>]| (0..m * n).map(|i| x[0].data()[i] + x[1].data()[i % n]).collect(),
            |t, v| t.add_row(v[0], v[1]).unwrap());

        both!("mul_row", vec![random(&mut rng, &[m, n]), random(&mut rng, &[n])],
            |x: &[Tensor<f64>]| (0..m * n).map(|i| x[0].data()[i] * x[1].data()[i % n]).collect(),
            |t, v| t.mul_row(v[0], v[1]).unwrap());

        both!("mean", vec![random(&mut rng, &[m, n])],
            |x: &[Tensor<f64>]| vec![x[0].data().iter().sum::<f64>() / (m * n) as f64],
            |t, v| t.mean(v[0]).unwrap());

        both!("transpose", vec![random(&mut rng, &[m, n])],
            |x: &[Tensor<f64>]| {
                let mut o = vec![0.0; m * n];
                for i in 0..m { for j in 0..n { o[j * m + i] = x[0].data()[i * n + j]; } }
                o
            },
            |t, v| t.transpose(v[0]).unwrap());

        both!("reshape", vec![random(&mut rng, &[m, n])],
            |x: &[Tensor<f64>]| x[0].data().to_vec(),
            |t, v| t.reshape(v[0], &[n, m]).unwrap());

        both!("concat", vec![random(&mut rng, &[m, 2]), random(&mut rng, &[m, 3])],
            |x: &[Tensor<f64>]| {
                let mut o = Vec::new();
                for i in 0..m {
                    o.extend_from_slice(&x[0].data()[i * 2..i * 2 + 2]);
                    o.extend_from_slice(&x[1].data()[i * 3..i * 3 + 3]);
                }
                o
            },
            |t, v| t.concat(&[v[0], v[1]]).unwrap());

        both!("slice", vec![random(&mut rng, &[m, 5])],
            |x: &[Tensor<f64>]| (0..m).flat_map(|i| x[0].data()[i * 5 + 1..i * 5 + 4].to_vec()).collect(),
            |t, v| t.slice(v[0], 1, 4).unwrap());

        both!("gelu", vec![random(&mut rng, &[m, n])],
            |x: &[Tensor<f64>]| x[0].data().iter().map(|&a| ref_gelu(a)).collect(),
            |t, v| t.gelu(v[0]).unwrap());

        both!("silu", vec![random(&mut rng, &[m, n])],
            |x: &[Tensor<f64>]| x[0].data().iter().map(|&a| a / (1.0 + (-a).exp())).collect(),
            |t, v| t.silu(v[0]).unwrap());

        both!("softmax", vec![random(&mut rng, &[m, n])],
            |x: &[Tensor<f64>]| ref_softmax(x[0].data(), n),
            |t, v| t.softmax(v[0]).unwrap());

        both!("layer_norm", vec![random(&mut rng, &[m, n + 2])],
            |x: &[Tensor<f64>]| ref_layer_norm(x[0].data(), n + 2),
            |t, v| t.layer_norm(v[0]).unwrap());

        let tq = 3 + round;
        both!("attention",
            vec![random(&mut rng, &[tq, 4]), random(&mut rng, &[tq + 1, 4]), random(&mut rng, &[tq + 1, 4])],
            |x: &[Tensor<f64>]| ref_attention(&x[0], &x[1], &x[2], 2),
            |t, v| t.attention(v[0], v[1], v[2], 2).unwrap());

        let perm: Arc<Vec<usize>> = Arc::new(vec![5, 0, 3, 3, 1]);
        let p2 = perm.clone();
        both!("gather", vec![random(&mut rng, &[2, 3])],
            |x: &[Tensor<f64>]| p2.iter().map(|&i| x[0].data()[i]).collect(),
            |t, v| t.gather(v[0], perm.clone(), &[5]).unwrap());
    }
}

#[test]
fn composite_chain_gradient() {
    // A small pre-norm MLP exercises accumulation across shared inputs.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = vec![random(&mut rng, &[4, 6]), random(&mut rng, &[6, 6]), random(&mut rng, &[6])];
    let build: &Build<'_, f64> = &|t, v| {
        let n = t.layer_norm(v[0]).unwrap();
        let h = t.matmul(n, v[1]).unwrap();
        let h = t.add_row(h, v[2]).unwrap();
        let h = t.gelu(h).unwrap();
        let a = t.attention(h, h, h, 3).unwrap();
        let s = t.softmax(a).unwrap();
        t.add(s, v[0]).unwrap()
    };
    check_vjp("composite", build, inputs, 7);
}

#[test]
fn concat_then_slice_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let rows = rng.gen_range(1..6);
        let widths: Vec<usize> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(1..7)).collect();
        let mut tape = Tape::<f64>::new();
        let parts: Vec<(Var, Tensor<f64>)> = widths
            .iter()
            .map(|&w| {
                let t = random(&mut rng, &[rows, w]);
                (tape.constant(t.clone()), t)
            })
            .collect();
        let vars: Vec<Var> = parts.iter().map(|p| p.0).collect();
        let joined = tape.concat(&vars).unwrap();
        let mut start = 0;
        for ((_, original), &w) in parts.iter().zip(&widths) {
            let back = tape.slice(joined, start, start + w).unwrap();
            assert_eq!(tape.value(back), original);
            start += w;
        }
    }
}

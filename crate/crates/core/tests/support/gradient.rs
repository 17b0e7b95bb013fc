//! Analytic gradients against central finite differences, in f64.
//!
//! Each `*_case` runs one seed and returns the worst relative error seen,
//! or a description of the first entry over tolerance.

use loadshift::nn::{mean_huber, Activation, BatchNorm, Conv2d, Linear, Mode, NetConfig, QNetwork, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEEDS: u64 = 20;
pub const TOL: f64 = 1e-4;
const H: f64 = 1e-6;

pub type CaseResult = Result<f64, String>;

/// Relative error with a floor so roundoff on vanishing gradients is not amplified.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-5)
}

fn check(what: &str, seed: u64, analytic: &[f64], numeric: &[f64]) -> CaseResult {
    if analytic.len() != numeric.len() {
        return Err(format!("{what}: {} analytic vs {} numeric entries", analytic.len(), numeric.len()));
    }
    let mut worst = 0.0f64;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = rel_err(a, n);
        if e.is_nan() || e >= TOL {
            return Err(format!("{what} seed {seed} entry {i}: analytic {a:e} numeric {n:e} rel {e:e}"));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

/// Central differences of `f` with respect to every entry of `params`.
fn numeric_grad(params: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let keep = params[i];
            params[i] = keep + H;
            let up = f(params);
            params[i] = keep - H;
            let down = f(params);
            params[i] = keep;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn conv_case(seed: u64) -> CaseResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cin, batch, h, w) = (2, 2, 7, 6);
    let conv = Conv2d::<f64>::new(cin, 3, 5, 2, 2, &mut rng);
    let x = Activation { channels: cin, batch, height: h, width: w, data: random_vec(&mut rng, cin * batch * h * w) };
    let (y, col) = conv.forward(&x);
    let r = random_vec(&mut rng, y.data.len());
    let mut dw = vec![0.0; conv.weight.len()];
    let dx = conv
        .backward((h, w), &col, &Activation { data: r.clone(), ..y }, &mut dw, true)
        .ok_or("conv returned no input gradient")?;

    let mut weights = conv.weight.clone();
    let num_w = numeric_grad(&mut weights, |wt| {
        let c = Conv2d { weight: wt.to_vec(), ..conv.clone() };
        dot(&c.forward(&x).0.data, &r)
    });
    let mut xs = x.data.clone();
    let num_x = numeric_grad(&mut xs, |d| dot(&conv.forward(&Activation { data: d.to_vec(), ..x.clone() }).0.data, &r));
    Ok(check("conv weight", seed, &dw, &num_w)?.max(check("conv input", seed, &dx.data, &num_x)?))
}

pub fn batch_norm_case(seed: u64, training: bool) -> CaseResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, batch, h, w) = (3, 3, 2, 2);
    let mut bn = BatchNorm::<f64>::new(c, 0.1, 1e-5);
    bn.gamma = (0..c).map(|_| rng.gen_range(0.5..1.5)).collect();
    bn.beta = random_vec(&mut rng, c);
    bn.running_mean = random_vec(&mut rng, c);
    bn.running_var = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
    let x = Activation { channels: c, batch, height: h, width: w, data: random_vec(&mut rng, c * batch * h * w) };
    let r = random_vec(&mut rng, x.data.len());
    let (y, cache) = bn.forward(&x, training);
    let (mut dgamma, mut dbeta) = (vec![0.0; c], vec![0.0; c]);
    let dx = bn.backward(&cache, &Activation { data: r.clone(), ..y }, &mut dgamma, &mut dbeta);
    let what = if training { "batch norm (train)" } else { "batch norm (eval)" };

    let mut xs = x.data.clone();
    let num_x = numeric_grad(&mut xs, |d| dot(&bn.forward(&Activation { data: d.to_vec(), ..x.clone() }, training).0.data, &r));
    let mut g = bn.gamma.clone();
    let num_g = numeric_grad(&mut g, |gm| dot(&BatchNorm { gamma: gm.to_vec(), ..bn.clone() }.forward(&x, training).0.data, &r));
    let mut b = bn.beta.clone();
    let num_b = numeric_grad(&mut b, |bt| dot(&BatchNorm { beta: bt.to_vec(), ..bn.clone() }.forward(&x, training).0.data, &r));
    Ok(check(what, seed, &dx.data, &num_x)?
        .max(check(what, seed, &dgamma, &num_g)?)
        .max(check(what, seed, &dbeta, &num_b)?))
}

pub fn linear_case(seed: u64) -> CaseResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, fin, fout) = (4, 7, 5);
    let mut fc = Linear::<f64>::new(fin, fout, &mut rng);
    fc.bias = random_vec(&mut rng, fout);
    let x = random_vec(&mut rng, batch * fin);
    let r = random_vec(&mut rng, batch * fout);
    let (mut dw, mut db) = (vec![0.0; fc.weight.len()], vec![0.0; fout]);
    let dx = fc.backward(&x, &r, batch, &mut dw, &mut db);

    let mut xs = x.clone();
    let num_x = numeric_grad(&mut xs, |d| dot(&fc.forward(d, batch), &r));
    let mut ws = fc.weight.clone();
    let num_w = numeric_grad(&mut ws, |wt| dot(&Linear { weight: wt.to_vec(), ..fc.clone() }.forward(&x, batch), &r));
    let mut bs = fc.bias.clone();
    let num_b = numeric_grad(&mut bs, |bt| dot(&Linear { bias: bt.to_vec(), ..fc.clone() }.forward(&x, batch), &r));
    Ok(check("linear input", seed, &dx, &num_x)?
        .max(check("linear weight", seed, &dw, &num_w)?)
        .max(check("linear bias", seed, &db, &num_b)?))
}

pub fn small_net(conv_channels: Vec<usize>) -> NetConfig {
    NetConfig { input_height: 9, input_width: 8, conv_channels, hidden_units: 6, ..NetConfig::default() }
}

fn huber_loss_of(net: &QNetwork<f64>, input: &Tensor<f64>, actions: &[usize], targets: &[f64], mode: Mode) -> f64 {
    let (q, _) = net.forward(input, mode).expect("forward");
    let deltas: Vec<f64> = actions.iter().zip(targets).enumerate().map(|(i, (&a, &y))| q.row(i)[a] - y).collect();
    mean_huber(&deltas)
}

/// Whole network with the Huber head, every parameter tensor.
pub fn network_case(seed: u64, config: NetConfig, mode: Mode) -> CaseResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = QNetwork::<f64>::new(config.clone(), &mut rng).map_err(|e| e.to_string())?;
    // Move batch-norm affine parameters and running statistics off their defaults.
    for p in net.parameters_mut() {
        for v in p.iter_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    for s in net.running_stats_mut() {
        for v in s.iter_mut() {
            *v = v.abs() + rng.gen_range(0.1..0.5);
        }
    }
    let batch = 4;
    let input = Tensor::new(
        vec![batch, config.input_planes, config.input_height, config.input_width],
        (0..batch * config.input_len()).map(|_| f64::from(u8::from(rng.gen_bool(0.4)))).collect(),
    )
    .map_err(|e| e.to_string())?;
    let actions: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..config.outputs)).collect();
    // Spread targets so both Huber regimes occur.
    let targets: Vec<f64> = (0..batch).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let (_, grads, _) = net.huber_gradients(&input, &actions, &targets, mode).map_err(|e| e.to_string())?;

    let mut worst = 0.0f64;
    for t in 0..grads.tensors.len() {
        let mut values = net.parameters()[t].to_vec();
        let numeric = numeric_grad(&mut values, |v| {
            let mut n = net.clone();
            n.parameters_mut()[t].copy_from_slice(v);
            huber_loss_of(&n, &input, &actions, &targets, mode)
        });
        worst = worst.max(check(&format!("network tensor {t} ({mode:?})"), seed, &grads.tensors[t], &numeric)?);
    }
    Ok(worst)
}

/// Every case over every seed; the worst error or the first failure.
pub fn all_cases() -> CaseResult {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        worst = worst
            .max(conv_case(seed)?)
            .max(batch_norm_case(seed, true)?)
            .max(batch_norm_case(seed, false)?)
            .max(linear_case(seed)?)
            .max(network_case(seed, small_net(vec![3, 4]), Mode::Train)?)
            .max(network_case(seed, small_net(vec![3]), Mode::Eval)?);
    }
    Ok(worst)
}

#![allow(dead_code)]

use chordmixer::autograd::{Graph, NodeId, Rng, Stream, Tensor};
use chordmixer::data::batched_forward;
use chordmixer::model::{ChordMixerNet, Input};

pub const FD_STEP: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, 1e-3)`; the floor keeps near-zero gradients from
/// turning rounding noise into large relative errors.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

pub fn random_tensor(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.uniform_range(-1.0, 1.0))
}

/// Largest relative error between reverse-mode gradients of the scalar built
/// by `build` and central finite differences, over every input element.
pub fn max_grad_error<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let eval = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &ids);
        assert_eq!(g.value(out).numel(), 1, "loss must be a scalar");
        g.value(out).data()[0]
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &ids);
    let grads = g.backward(out);

    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for (k, id) in ids.iter().enumerate() {
        for e in 0..inputs[k].numel() {
            let analytic = grads.get(*id).map_or(0.0, |t| t.data()[e]);
            let orig = xs[k].data()[e];
            xs[k].data_mut()[e] = orig + FD_STEP;
            let plus = eval(&xs);
            xs[k].data_mut()[e] = orig - FD_STEP;
            let minus = eval(&xs);
            xs[k].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    worst
}

/// Scalar `sum(x ⊙ r)` for a fixed random `r`, so a non-scalar op is checked
/// through a full vector-Jacobian product.
pub fn project(g: &mut Graph, x: NodeId, seed: u64) -> NodeId {
    let shape = g.value(x).shape().to_vec();
    let mut rng = Rng::stream(seed, Stream::Custom(99));
    let n: usize = shape.iter().product();
    let r = Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
    let r = g.leaf(r);
    let prod = g.mul(x, r).unwrap();
    g.sum(prod)
}

pub fn real_input(channels: usize, n: usize, rng: &mut Rng) -> Input {
    Input::Real(random_tensor(channels, n, rng))
}

/// Summed prediction of every input, projected to a scalar.
pub fn net_loss(g: &mut Graph, net: &ChordMixerNet, inputs: &[Input], seed: u64) -> NodeId {
    let mut total = None;
    for (k, input) in inputs.iter().enumerate() {
        let pred = net.forward(g, input, false, None).unwrap();
        let l = project(g, pred, seed + k as u64);
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l).unwrap(),
        });
    }
    total.unwrap()
}

/// Largest relative error between parameter gradients of `net_loss` and
/// central differences, reported per parameter tensor name.
pub fn net_grad_errors(net: &ChordMixerNet, inputs: &[Input], seed: u64) -> Vec<(String, f64)> {
    let mut g = Graph::new();
    let loss = net_loss(&mut g, net, inputs, seed);
    let grads = g.backward(loss).for_params(&g, net.params());

    let eval = |n: &ChordMixerNet| {
        let mut g = Graph::new();
        let l = net_loss(&mut g, n, inputs, seed);
        g.value(l).data()[0]
    };
    let mut probe = net.clone();
    let ids: Vec<_> = net.params().ids().collect();
    ids.iter()
        .zip(&grads)
        .map(|(&id, grad)| {
            let mut worst = 0.0f64;
            for e in 0..grad.numel() {
                let orig = probe.params().get(id).data()[e];
                probe.params_mut().get_mut(id).data_mut()[e] = orig + FD_STEP;
                let plus = eval(&probe);
                probe.params_mut().get_mut(id).data_mut()[e] = orig - FD_STEP;
                let minus = eval(&probe);
                probe.params_mut().get_mut(id).data_mut()[e] = orig;
                worst = worst.max(rel_err(grad.data()[e], (plus - minus) / (2.0 * FD_STEP)));
            }
            (net.params().name(id).to_string(), worst)
        })
        .collect()
}

/// Max prediction and gradient discrepancy between one batched pass and
/// per-sequence passes over the same bucket.
pub fn batch_discrepancy(net: &ChordMixerNet, inputs: &[Input], seed: u64) -> (f64, f64) {
    let refs: Vec<&Input> = inputs.iter().collect();
    let mut g = Graph::new();
    let out = batched_forward(&mut g, net, &refs, false, None).unwrap();
    let mut total = None;
    for (k, &p) in out.predictions.iter().enumerate() {
        let l = project(&mut g, p, seed + k as u64);
        total = Some(total.map_or(l, |t| g.add(t, l).unwrap()));
    }
    let batched_preds: Vec<Vec<f64>> = out.predictions.iter().map(|&p| g.value(p).data().to_vec()).collect();
    let batched_grads = g.backward(total.unwrap()).for_params(&g, net.params());

    let mut pred_err = 0.0f64;
    let mut summed: Vec<Vec<f64>> = batched_grads.iter().map(|t| vec![0.0; t.numel()]).collect();
    for (k, input) in inputs.iter().enumerate() {
        let mut g = Graph::new();
        let p = net.forward(&mut g, input, false, None).unwrap();
        for (a, b) in g.value(p).data().iter().zip(&batched_preds[k]) {
            pred_err = pred_err.max((a - b).abs());
        }
        let l = project(&mut g, p, seed + k as u64);
        for (acc, t) in summed.iter_mut().zip(g.backward(l).for_params(&g, net.params())) {
            acc.iter_mut().zip(t.data()).for_each(|(a, v)| *a += v);
        }
    }
    let grad_err = summed
        .iter()
        .zip(&batched_grads)
        .flat_map(|(s, b)| s.iter().zip(b.data()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    (pred_err, grad_err)
}

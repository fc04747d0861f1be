mod common;

use chordmixer::autograd::{Graph, Rng, Stream, Tensor};
use chordmixer::model::{
    depth_of, matrix_rank, mlp_param_count, param_count_formula, rank_certificates, receptive_field,
    ChordMixerNet, HeadKind, Input, InputKind, NetConfig,
};
use chordmixer::topology::{reachability_closure, TrackLayout};
use common::{net_grad_errors, random_tensor, real_input};

fn real_net(channels: usize, d: usize, h: usize, n_max: usize, seed: u64) -> ChordMixerNet {
    ChordMixerNet::new(NetConfig {
        input: InputKind::Real { channels },
        channels: d,
        track_size: None,
        hidden: h,
        n_max,
        out_dim: 1,
        head: HeadKind::Avg,
        dropout: 0.0,
        seed,
    })
    .unwrap()
}

fn symbol_net(vocab: usize, d: usize, n_max: usize, out_dim: usize, head: HeadKind) -> ChordMixerNet {
    ChordMixerNet::new(NetConfig {
        input: InputKind::Symbols { vocab },
        channels: d,
        track_size: None,
        hidden: 7,
        n_max,
        out_dim,
        head,
        dropout: 0.0,
        seed: 3,
    })
    .unwrap()
}

fn zero_blocks(net: &mut ChordMixerNet) {
    for mlp in net.blocks().to_vec() {
        for id in [mlp.w1, mlp.b1, mlp.w2, mlp.b2] {
            net.params_mut().get_mut(id).data_mut().fill(0.0);
        }
    }
}

#[test]
fn rotating_a_delta() {
    let layout = TrackLayout::new(5, 16).unwrap();
    assert_eq!(layout.track_offsets(), &[0, 1, 2, 4, 8]);
    let x = Tensor::from_fn(5, 16, |_, j| if j == 0 { 1.0 } else { 0.0 });
    let mut g = Graph::new();
    let xn = g.leaf(x);
    let z = g.rotate(xn, &layout.rotation_offsets(16)).unwrap();
    let hot: Vec<usize> = (0..5)
        .map(|i| (0..16).find(|&j| g.value(z).at(i, j) == 1.0).unwrap())
        .collect();
    assert_eq!(hot, vec![0, 15, 14, 12, 8]);
    assert_eq!(g.value(z).sum(), 5.0);
}

#[test]
fn rotation_inverse_and_norm() {
    let mut rng = Rng::stream(4, Stream::Custom(0));
    let layout = TrackLayout::new(11, 100).unwrap();
    for n in [1, 3, 16, 100] {
        let x = random_tensor(11, n, &mut rng);
        let offsets = layout.rotation_offsets(n);
        let back: Vec<usize> = offsets.iter().map(|&o| (n - o) % n).collect();
        let mut g = Graph::new();
        let xn = g.leaf(x.clone());
        let z = g.rotate(xn, &offsets).unwrap();
        let y = g.rotate(z, &back).unwrap();
        assert_eq!(g.value(y), &x);
        assert_eq!(g.value(z).norm(), x.norm());
        if n == 1 {
            assert_eq!(g.value(z), &x);
        }
    }
}

#[test]
fn mix_commutes_with_column_permutation() {
    let net = real_net(2, 6, 5, 16, 1);
    let mlp = net.blocks()[0];
    let mut rng = Rng::stream(8, Stream::Custom(0));
    let x = random_tensor(6, 7, &mut rng);
    let mut perm: Vec<usize> = (0..7).collect();
    rng.shuffle(&mut perm);
    let xp = Tensor::from_fn(6, 7, |i, j| x.at(i, perm[j]));

    let mut g = Graph::new();
    let (a, b) = (g.leaf(x), g.leaf(xp));
    let ya = mlp.apply(&mut g, net.params(), a).unwrap();
    let yb = mlp.apply(&mut g, net.params(), b).unwrap();
    let expected = Tensor::from_fn(6, 7, |i, j| g.value(ya).at(i, perm[j]));
    assert_eq!(g.value(yb), &expected);
}

#[test]
fn mix_of_zero_weights_is_zero_and_columns_are_independent() {
    let mut net = real_net(2, 6, 5, 16, 1);
    let mut rng = Rng::stream(9, Stream::Custom(0));
    let x = random_tensor(6, 4, &mut rng);
    let mlp = net.blocks()[0];

    let mut g = Graph::new();
    let xn = g.leaf(x.clone());
    let full = mlp.apply(&mut g, net.params(), xn).unwrap();
    for j in 0..4 {
        let col = g.leaf(Tensor::from_fn(6, 1, |i, _| x.at(i, j)));
        let y = mlp.apply(&mut g, net.params(), col).unwrap();
        assert_eq!(g.value(y).data(), g.value(full).column(j).as_slice());
    }

    zero_blocks(&mut net);
    let mut g = Graph::new();
    let xn = g.leaf(x);
    let y = mlp.apply(&mut g, net.params(), xn).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_mlps_make_the_network_a_residual_identity() {
    let mut net = real_net(3, 8, 4, 100, 2);
    zero_blocks(&mut net);
    let mut rng = Rng::stream(10, Stream::Custom(0));
    for n in [1, 3, 16, 100] {
        let input = real_input(3, n, &mut rng);
        let (pred, trace) = net.trace(&input).unwrap();
        assert_eq!(trace.embedded.shape(), &[8, n]);
        for b in &trace.blocks {
            assert_eq!(b, &trace.embedded);
        }
        // head(mean(embedding))
        let mut g = Graph::new();
        let e = g.leaf(trace.embedded.clone());
        let m = g.mean_cols(e);
        let out = net.linear_head(&mut g, m).unwrap();
        assert_eq!(g.value(out).data(), pred.as_slice());
    }
}

#[test]
fn one_block_spreads_a_delta_to_the_rotation_targets() {
    // Identity embedding and identity MLP weights: the block output is
    // x + gelu(rotate(x)), nonzero exactly where the delta was rotated to.
    let mut net = real_net(5, 5, 5, 16, 0);
    zero_blocks(&mut net);
    let eye = Tensor::from_fn(5, 5, |i, j| f64::from(u8::from(i == j)));
    let emb = net.embedding();
    *net.params_mut().get_mut(emb) = eye.clone();
    let mlp = net.blocks()[0];
    *net.params_mut().get_mut(mlp.w1) = eye.clone();
    *net.params_mut().get_mut(mlp.w2) = eye;

    let x = Tensor::from_fn(5, 16, |_, j| if j == 0 { 1.0 } else { 0.0 });
    let (_, trace) = net.trace(&Input::Real(x)).unwrap();
    let out = &trace.blocks[0];
    let mut touched: Vec<usize> = (0..16)
        .filter(|&j| (0..5).any(|i| out.at(i, j) != 0.0))
        .collect();
    touched.sort_unstable();
    assert_eq!(touched, vec![0, 8, 12, 14, 15]);
    for (i, &j) in [0usize, 15, 14, 12, 8].iter().enumerate() {
        assert!(out.at(i, j) > 0.0);
    }
}

#[test]
fn depth_follows_sequence_length() {
    let net = real_net(2, 14, 3, 6655, 0);
    assert_eq!(net.blocks().len(), 13);
    assert_eq!(net.depth_for(1), 1);
    assert_eq!(net.depth_for(2), 1);
    assert_eq!(net.depth_for(1000), 10);
    assert_eq!(net.depth_for(6655), 13);
    assert_eq!(depth_of(40), 6);
}

#[test]
fn later_blocks_do_not_touch_short_sequences() {
    let net = real_net(2, 14, 3, 6655, 5);
    let mut rng = Rng::stream(11, Stream::Custom(0));
    let input = real_input(2, 1000, &mut rng);
    let before = net.predict(&input).unwrap();

    let mut g = Graph::new();
    let pred = net.forward(&mut g, &input, false, None).unwrap();
    let loss = g.sum(pred);
    let grads = g.backward(loss).for_params(&g, net.params());
    let ids: Vec<_> = net.params().ids().collect();
    for (b, mlp) in net.blocks().iter().enumerate().skip(10) {
        for id in [mlp.w1, mlp.b1, mlp.w2, mlp.b2] {
            let k = ids.iter().position(|&p| p == id).unwrap();
            assert!(grads[k].data().iter().all(|&v| v == 0.0), "block {b}");
        }
    }

    let mut perturbed = net.clone();
    let mlp = perturbed.blocks()[11];
    perturbed.params_mut().get_mut(mlp.w1).data_mut().iter_mut().for_each(|v| *v += 0.5);
    let after = perturbed.predict(&input).unwrap();
    assert_eq!(before, after);
}

#[test]
fn average_head_equals_average_of_token_predictions() {
    let net = real_net(3, 8, 4, 64, 6);
    let mut rng = Rng::stream(12, Stream::Custom(0));
    for n in [1, 7, 64] {
        let input = real_input(3, n, &mut rng);
        let (pred, trace) = net.trace(&input).unwrap();
        let last = trace.blocks.last().unwrap();
        let mut g = Graph::new();
        let mut acc = vec![0.0; pred.len()];
        for j in 0..n {
            let col = g.leaf(Tensor::from_fn(8, 1, |i, _| last.at(i, j)));
            let y = net.linear_head(&mut g, col).unwrap();
            for (a, v) in acc.iter_mut().zip(g.value(y).data()) {
                *a += v / n as f64;
            }
        }
        for (a, p) in acc.iter().zip(&pred) {
            assert!((a - p).abs() < 1e-12, "n={n}: {a} vs {p}");
        }
    }
}

#[test]
fn constant_columns_pool_to_any_column() {
    let mut net = real_net(1, 6, 3, 16, 1);
    zero_blocks(&mut net);
    let input = Input::Real(Tensor::full(&[1, 9], 0.7));
    let single = Input::Real(Tensor::full(&[1, 1], 0.7));
    let (a, b) = (net.predict(&input).unwrap(), net.predict(&single).unwrap());
    assert!((a[0] - b[0]).abs() < 1e-15, "{a:?} vs {b:?}");
}

#[test]
fn cls_head() {
    let mut net = symbol_net(4, 6, 32, 3, HeadKind::Cls);
    let seq = Input::Symbols(vec![0, 1, 2, 3, 1, 0, 2]);
    assert_eq!(net.predict(&seq).unwrap().len(), 3);

    let mut g = Graph::new();
    let logits = net.forward(&mut g, &seq, false, None).unwrap();
    let loss = g.weighted_cross_entropy(logits, 1, 1.0).unwrap();
    let grads = g.backward(loss).for_params(&g, net.params());
    let cls = net.cls_token().unwrap();
    let k = net.params().ids().position(|p| p == cls).unwrap();
    assert!(grads[k].norm() > 0.0);

    zero_blocks(&mut net);
    let mut g = Graph::new();
    let token = g.param(net.params(), cls);
    let col = g.leaf(Tensor::from_fn(6, 1, |i, _| g.value(token).data()[i]));
    let expected = net.linear_head(&mut g, col).unwrap();
    let expected = g.value(expected).data().to_vec();
    for s in [vec![0], vec![3, 3, 3], vec![1, 2, 0, 3, 2, 1, 0, 0, 2]] {
        assert_eq!(net.predict(&Input::Symbols(s)).unwrap(), expected);
    }
}

#[test]
fn parameter_count_matches_formula() {
    let net = real_net(2, 24, 16, 100, 0);
    assert_eq!(net.param_count(), param_count_formula(24, 16, 7, 2, 1, false));
    let cls = symbol_net(5, 6, 32, 3, HeadKind::Cls);
    assert_eq!(cls.param_count(), param_count_formula(6, 7, 5, 5, 3, true));
    assert_eq!(mlp_param_count(4, 8, 3), 228);
    assert_eq!(mlp_param_count(4, 8, 4) - mlp_param_count(4, 8, 3), 2 * 4 * 8 + 8 + 4);
    let (d, h) = (10, 6);
    let doubled = mlp_param_count(d, 2 * h, 1);
    let single = mlp_param_count(d, h, 1);
    assert!(doubled <= 2 * single + h + d && doubled + h + d >= 2 * single);
}

#[test]
fn receptive_field_examples() {
    let l16 = TrackLayout::new(5, 16).unwrap();
    assert!(receptive_field(16, &l16, 4).is_full());
    assert!(!receptive_field(16, &l16, 0).is_full());

    let l1024 = TrackLayout::new(11, 1024).unwrap();
    assert!(receptive_field(1024, &l1024, 10).is_full());
    // One block fewer is full exactly when the closure says so.
    let closure = reachability_closure(1024);
    assert_eq!(receptive_field(1024, &l1024, 9).is_full(), closure <= 9);
}

#[test]
fn rank_examples() {
    let eye = Tensor::from_fn(2, 2, |i, j| f64::from(u8::from(i == j)));
    let r = rank_certificates(2, 4, &eye).unwrap();
    assert!(r.rotation_is_permutation);
    assert_eq!((r.mix_rank, r.block_rank), (8, 8));

    let w = Tensor::from_rows(&[vec![0.3, -1.2], vec![0.8, 0.5]]).unwrap();
    let r = rank_certificates(2, 4, &w).unwrap();
    assert!(r.full_rank());
    assert_eq!(r.w_rank, 2);

    let singular = Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
    let r = rank_certificates(2, 4, &singular).unwrap();
    assert_eq!(r.mix_rank, 4);
    assert!(!r.full_rank());
    assert_eq!(matrix_rank(&[vec![1.0, 2.0], vec![2.0, 4.0]]), 1);
    assert!(rank_certificates(8, 9, &Tensor::zeros(&[8, 8])).is_err());
}

#[test]
fn end_to_end_gradients_on_a_toy_network() {
    for seed in 0..3 {
        let net = real_net(2, 6, 5, 16, seed);
        assert_eq!(net.blocks().len(), 4);
        let mut rng = Rng::stream(seed, Stream::Custom(5));
        let inputs = [real_input(2, 5, &mut rng), real_input(2, 9, &mut rng)];
        for (name, err) in net_grad_errors(&net, &inputs, seed) {
            assert!(err < 1e-4, "seed {seed}, {name}: {err:e}");
        }
    }
}

#[test]
fn symbol_network_gradients() {
    let net = symbol_net(4, 6, 16, 2, HeadKind::Cls);
    let inputs = [Input::Symbols(vec![0, 3, 1, 2, 2]), Input::Symbols(vec![1, 0, 0, 3, 2, 1, 3, 3, 0])];
    for (name, err) in net_grad_errors(&net, &inputs, 1) {
        assert!(err < 1e-4, "{name}: {err:e}");
    }
}

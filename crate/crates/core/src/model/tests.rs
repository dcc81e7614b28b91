use super::*;
use noisecond_autodiff::{BufferStore, Graph, Mode, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn inputs_for(cfg: &ModelConfig, batch: usize, seed: u64) -> Inputs<f64> {
    Inputs {
        noisy: random_tensor(&[batch, 1, cfg.context, cfg.freq_bins], seed),
        noise: Some(random_tensor(&[batch, 1, cfg.hint, cfg.freq_bins], seed + 1)),
    }
}

fn tone_segment(cfg: &ModelConfig, bin: usize) -> Vec<f64> {
    (0..cfg.hint * cfg.freq_bins)
        .map(|i| if i % cfg.freq_bins == bin { 2.0 } else { -6.0 })
        .collect()
}

#[test]
fn zero_weight_block_is_relu_of_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut ps, mut bs) = (ParamStore::<f64>::new(), BufferStore::<f64>::new());
    let block = ResidualBlock::new(&mut ps, &mut bs, "b", 3, BlockSpec::new((3, 3), (1, 1), 3), None, &mut rng);
    assert!(block.shortcut.is_none());
    for w in [block.conv1.weight, block.conv2.weight] {
        ps.get_mut(w).value.data_mut().fill(0.0);
    }
    for bn in [&block.bn_mid, &block.bn_out] {
        bs.get_mut(bn.running_var).data_mut().fill(1.0 - bn.config.eps);
    }
    let x = random_tensor(&[2, 3, 5, 4], 3);
    let mut g = Graph::new(&ps);
    let xv = g.input(x.clone());
    let y = block.forward(&mut g, &mut bs, xv, None, Mode::Eval).unwrap();
    assert_eq!(g.shape(y), x.shape());
    for (a, b) in g.value(y).data().iter().zip(x.data()) {
        assert!((a - b.max(0.0)).abs() < 1e-12);
    }
}

#[test]
fn strided_block_shape_and_projection_shortcut() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut ps, mut bs) = (ParamStore::<f32>::new(), BufferStore::<f32>::new());
    let block = ResidualBlock::new(&mut ps, &mut bs, "b", 1, BlockSpec::new((8, 4), (3, 2), 64), None, &mut rng);
    assert!(block.shortcut.is_some());
    let mut g = Graph::new(&ps);
    let x = g.input(random_tensor(&[1, 1, 35, 201], 2).cast());
    let y = block.forward(&mut g, &mut bs, x, None, Mode::Eval).unwrap();
    assert_eq!(g.shape(y), [1, 64, 12, 101]);
}

#[test]
fn full_size_embedding_is_512_wide_with_expected_trace() {
    let cfg = ModelConfig::full();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut ps, mut bs) = (ParamStore::<f32>::new(), BufferStore::<f32>::new());
    let net = EmbeddingNet::new(&cfg, &mut ps, &mut bs, &mut rng);
    let mut g = Graph::new(&ps);
    let x = g.input(random_tensor(&[2, 1, 35, 201], 6).cast());
    let mut trace = Vec::new();
    let e = net.forward(&mut g, &mut bs, x, Mode::Eval, &mut trace).unwrap();
    assert_eq!(g.shape(e), [2, 512]);
    let spatial: Vec<_> = trace.iter().map(|s| (s[2], s[3])).collect();
    assert_eq!(spatial, vec![(35, 201), (12, 101), (4, 51), (4, 51), (4, 26)]);
    assert_eq!(cfg.embedding_trace(), spatial);
}

#[test]
fn embedding_input_shape_is_checked() {
    let cfg = ModelConfig::miniature();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut ps, mut bs) = (ParamStore::<f64>::new(), BufferStore::<f64>::new());
    let net = EmbeddingNet::new(&cfg, &mut ps, &mut bs, &mut rng);
    let mut g = Graph::new(&ps);
    let x = g.input(random_tensor(&[2, 1, cfg.hint + 1, cfg.freq_bins], 6));
    assert!(matches!(
        net.forward(&mut g, &mut bs, x, Mode::Eval, &mut Vec::new()),
        Err(Error::Shape(_))
    ));
}

#[test]
fn distinct_tones_give_distinct_embeddings() {
    let cfg = ModelConfig::miniature();
    let mut model = Model::<f64>::new(cfg.clone(), 11).unwrap();
    let mut noise = tone_segment(&cfg, 3);
    noise.extend(tone_segment(&cfg, 12));
    let inputs = Inputs {
        noisy: random_tensor(&[2, 1, cfg.context, cfg.freq_bins], 1),
        noise: Some(Tensor::new(vec![2, 1, cfg.hint, cfg.freq_bins], noise).unwrap()),
    };
    let e = model.embed(&inputs, Mode::Eval).unwrap();
    assert_eq!(e.shape(), [2, cfg.embed_dim]);
    let (a, b) = e.data().split_at(cfg.embed_dim);
    let dist: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    assert!(dist > 0.0);
}

#[test]
fn inject_condition_definition_and_identity() {
    let ps = ParamStore::<f64>::new();
    let (b, c, h, w) = (2, 3, 4, 5);
    let mut g = Graph::new(&ps);
    let x = g.input(random_tensor(&[b, c, h, w], 1));
    let zb = g.input(Tensor::zeros(vec![b, c]));
    let zt = g.input(Tensor::zeros(vec![h, c]));
    let zf = g.input(Tensor::zeros(vec![w, c]));
    let y = inject_condition(&mut g, x, Some(zb), Some(zt), Some(zf)).unwrap();
    assert_eq!(g.value(y), g.value(x));

    let zero = g.input(Tensor::zeros(vec![b, c, h, w]));
    let (vt, tt, ft) = (random_tensor(&[b, c], 2), random_tensor(&[h, c], 3), random_tensor(&[w, c], 4));
    let (v, t, f) = (g.input(vt.clone()), g.input(tt.clone()), g.input(ft.clone()));
    let y = inject_condition(&mut g, zero, Some(v), Some(t), Some(f)).unwrap();
    let out = g.value(y).data();
    for bi in 0..b {
        for ci in 0..c {
            for hi in 0..h {
                for wi in 0..w {
                    let want = vt.data()[bi * c + ci] + tt.data()[hi * c + ci] + ft.data()[wi * c + ci];
                    assert_eq!(out[((bi * c + ci) * h + hi) * w + wi], want);
                }
            }
        }
    }

    let y = inject_condition(&mut g, x, Some(v), Some(t), Some(f)).unwrap();
    let (py, px) = (g.global_avg_pool(y).unwrap(), g.global_avg_pool(x).unwrap());
    for bi in 0..b {
        for ci in 0..c {
            let mt = (0..h).map(|i| tt.data()[i * c + ci]).sum::<f64>() / h as f64;
            let mf = (0..w).map(|i| ft.data()[i * c + ci]).sum::<f64>() / w as f64;
            let want = vt.data()[bi * c + ci] + mt + mf;
            let got = g.value(py).data()[bi * c + ci] - g.value(px).data()[bi * c + ci];
            assert!((got - want).abs() < 1e-12);
        }
    }
    let bad = g.input(Tensor::zeros(vec![h + 1, c]));
    assert!(matches!(inject_condition(&mut g, x, None, Some(bad), None), Err(Error::Shape(_))));
}

#[test]
fn location_embedding_is_deterministic_and_trainable() {
    let cfg = ModelConfig::full();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut ps, mut bs) = (ParamStore::<f64>::new(), BufferStore::<f64>::new());
    let extents = &cfg.enhancement_trace()[1..];
    let net = LocationEmbedder::new_for_tests(&mut ps, &mut bs, cfg.loc_hidden, extents, &mut rng);
    let mut g = Graph::new(&ps);
    let a = net.embed_axis(&mut g, &mut bs, Axis::Time, 7, Mode::Eval).unwrap();
    let b = net.embed_axis(&mut g, &mut bs, Axis::Time, 7, Mode::Eval).unwrap();
    assert_eq!(g.shape(a), [7, 50]);
    assert_eq!(g.value(a), g.value(b));

    let t = net.embed_axis(&mut g, &mut bs, Axis::Freq, 9, Mode::Train).unwrap();
    let probe = g.input(random_tensor(&[9, 50], 1));
    let l = g.mse_loss(t, probe).unwrap();
    let grads = g.backward(l).unwrap();
    let fc1 = grads.params().iter().find(|(id, _)| *id == net.freq.fc1.weight).unwrap();
    assert!(fc1.1.iter().any(|v| *v != 0.0));
    assert_eq!(normalised_positions(5), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    assert_eq!(normalised_positions(1), vec![0.0]);
}

#[test]
fn zeroed_output_layer_is_identity_on_central_frame() {
    for cfg in [
        ModelConfig::miniature(),
        ModelConfig { use_noise_embedding: false, ..ModelConfig::miniature() },
        ModelConfig { arch: Arch::NoiseAware, ..ModelConfig::miniature() },
    ] {
        let mut m = Model::<f64>::new(cfg.clone(), 3).unwrap();
        m.zero_output_layer();
        let inputs = inputs_for(&cfg, 3, 9);
        let out = m.predict(&inputs, Mode::Eval).unwrap();
        let c = cfg.central();
        for b in 0..3 {
            let start = (b * cfg.context + c) * cfg.freq_bins;
            assert_eq!(
                &out.data()[b * cfg.freq_bins..(b + 1) * cfg.freq_bins],
                &inputs.noisy.data()[start..start + cfg.freq_bins]
            );
        }
    }
}

#[test]
fn forward_trace_matches_shape_algebra() {
    let cfg = ModelConfig::desk();
    let mut m = Model::<f32>::new(cfg.clone(), 0).unwrap();
    let t = m.trace(&inputs_for(&cfg, 2, 0).cast(), Mode::Eval).unwrap();
    let sp = |v: &[Vec<usize>]| v.iter().map(|s| (s[2], s[3])).collect::<Vec<_>>();
    assert_eq!(sp(&t.embedding), cfg.embedding_trace());
    assert_eq!(sp(&t.enhancement), cfg.enhancement_trace());
    assert_eq!(t.embedding_out, Some(vec![2, cfg.embed_dim]));
    assert_eq!(t.output, vec![2, cfg.freq_bins]);
    let last = t.enhancement.last().unwrap();
    assert_eq!(last[1] * last[2] * last[3], cfg.flatten_width());
}

#[test]
fn embedding_changes_the_output() {
    let cfg = ModelConfig::miniature();
    let mut m = Model::<f64>::new(cfg.clone(), 4).unwrap();
    let mut a = inputs_for(&cfg, 2, 1);
    let out_a = m.predict(&a, Mode::Eval).unwrap();
    a.noise = Some(random_tensor(&[2, 1, cfg.hint, cfg.freq_bins], 77));
    let out_b = m.predict(&a, Mode::Eval).unwrap();
    let d: f64 = out_a.data().iter().zip(out_b.data()).map(|(x, y)| (x - y).abs()).sum();
    assert!(d > 0.0);
}

#[test]
fn missing_noise_segment_is_a_contract_violation() {
    let cfg = ModelConfig::miniature();
    let mut m = Model::<f64>::new(cfg.clone(), 4).unwrap();
    let mut inputs = inputs_for(&cfg, 2, 1);
    inputs.noise = None;
    assert!(matches!(m.predict(&inputs, Mode::Eval), Err(Error::ContractViolation(_))));
    let mut m = Model::<f64>::new(ModelConfig { use_noise_embedding: false, ..cfg.clone() }, 4).unwrap();
    m.predict(&inputs, Mode::Eval).unwrap();
    let bad = Inputs { noisy: random_tensor(&[2, 1, cfg.context + 1, cfg.freq_bins], 0), noise: None };
    assert!(matches!(m.predict(&bad, Mode::Eval), Err(Error::Shape(_))));
}

#[test]
fn without_embedding_noise_segments_are_ignored() {
    let cfg = ModelConfig { use_noise_embedding: false, ..ModelConfig::miniature() };
    let mut m = Model::<f64>::new(cfg.clone(), 8).unwrap();
    if let Network::Conditioned { enhancement, .. } = &m.network {
        let ids: Vec<_> = enhancement
            .blocks
            .iter()
            .flat_map(|b| b.condition.as_ref().unwrap().iter())
            .flat_map(|c| [c.time_proj.weight, c.freq_proj.weight])
            .collect();
        for id in ids {
            m.params.get_mut(id).value.data_mut().fill(0.0);
        }
    }
    let inputs = inputs_for(&cfg, 4, 2);
    let out = m.predict(&inputs, Mode::Train).unwrap();
    let mut permuted = inputs.clone();
    let noise = inputs.noise.as_ref().unwrap();
    let seg = cfg.hint * cfg.freq_bins;
    let mut data = Vec::new();
    for b in [2, 0, 3, 1] {
        data.extend_from_slice(&noise.data()[b * seg..(b + 1) * seg]);
    }
    permuted.noise = Some(Tensor::new(noise.shape().to_vec(), data).unwrap());
    assert_eq!(m.predict(&permuted, Mode::Train).unwrap(), out);
}

#[test]
fn baseline_noise_feature_is_time_mean() {
    let cfg = ModelConfig { arch: Arch::NoiseAware, ..ModelConfig::miniature() };
    let noisy = random_tensor(&[2, 1, cfg.context, cfg.freq_bins], 0);
    let noise = Tensor::full(vec![2, 1, cfg.hint, cfg.freq_bins], 0.37);
    let feats = baseline_features(&noisy, &noise, cfg.central(), cfg.baseline_frames).unwrap();
    let width = (cfg.baseline_frames + 1) * cfg.freq_bins;
    assert_eq!(feats.shape(), [2, width]);
    for b in 0..2 {
        let row = &feats.data()[b * width..(b + 1) * width];
        let start = (b * cfg.context + cfg.central() - cfg.baseline_frames / 2) * cfg.freq_bins;
        assert_eq!(&row[..cfg.baseline_frames * cfg.freq_bins], &noisy.data()[start..start + cfg.baseline_frames * cfg.freq_bins]);
        for v in &row[cfg.baseline_frames * cfg.freq_bins..] {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }
}

#[test]
fn cast_preserves_structure() {
    let m = Model::<f32>::new(ModelConfig::miniature(), 1).unwrap();
    let d: Model<f64> = m.cast();
    assert_eq!(d.params.len(), m.params.len());
    assert_eq!(d.buffers.len(), m.buffers.len());
    assert_eq!(d.network, m.network);
}

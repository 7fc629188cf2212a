use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mtsnn::grad::{backward, BackwardOptions, LossGrads};
use mtsnn::graph::{build_mtsnn, forward, forward_with_control, Block, Control, Topology};
use mtsnn::lif::{heaviside, Dynamics, LayerState, NeuronConfig, ResetMode};
use mtsnn::SpikeTensor;

fn reset_mode() -> impl Strategy<Value = ResetMode> {
    prop_oneof![Just(ResetMode::SubtractSpike), Just(ResetMode::SubtractThreshold)]
}

fn topology() -> impl Strategy<Value = Topology> {
    (
        2usize..8,
        prop::collection::vec(2usize..7, 0..3),
        prop::collection::vec(2usize..5, 0..2),
        prop::option::of(prop::collection::vec(2usize..4, 0..2)),
        1usize..4,
        0usize..3,
        any::<bool>(),
        reset_mode(),
        1.0f64..4.0,
    )
        .prop_map(|(input_size, feature, label_hidden, task_hidden, n1, n2, recurrent, reset_mode, init_gain)| {
            Topology {
                input_size,
                feature,
                label_hidden,
                task_hidden,
                num_labels_task1: n1,
                num_labels_task2: n2,
                neuron: NeuronConfig { tau_mem: 8.0, tau_syn: 2.0, reset_mode, ..Default::default() },
                recurrent,
                init_gain,
            }
        })
}

fn input(features: usize, t_steps: usize, seed: u64) -> SpikeTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let active = (0..t_steps).map(|_| (0..features as u32).filter(|_| rng.gen_bool(0.4)).collect()).collect();
    SpikeTensor::from_active(features, active, 1000)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn single_neuron_matches_scalar_recursion(
        alpha in 0.0f64..1.0,
        beta in 0.0f64..1.0,
        phi in 0.05f64..4.0,
        i_ext in -0.5f64..0.5,
        subtract_threshold in any::<bool>(),
        drive in prop::collection::vec(-2.0f64..2.0, 1..=100),
    ) {
        let r = if subtract_threshold { phi } else { 1.0 };
        let dyn_ = Dynamics { alpha, beta, threshold: phi, reset: r, i_ext };
        let mut state = LayerState::zeros(1);
        let (mut i, mut u, mut s) = (0.0f64, 0.0f64, 0.0f64);
        for &d in &drive {
            state.advance(&dyn_, &[d]);
            let u_next = alpha * u + i - r * s;
            i = beta * i + d + i_ext;
            u = u_next;
            s = if u >= phi { 1.0 } else { 0.0 };
            prop_assert_eq!(state.u[0].to_bits(), u.to_bits());
            prop_assert_eq!(state.i[0].to_bits(), i.to_bits());
            prop_assert_eq!(state.s[0], s);
        }
    }

    #[test]
    fn spikes_are_binary(topo in topology(), seed in 0u64..1000, phi in 0.1f64..3.0) {
        let net = build_mtsnn(&topo, seed).unwrap();
        let x = input(topo.input_size, 15, seed);
        let tr = forward(&net, &x, phi, topo.task_hidden.is_some()).unwrap();
        for layer in tr.layers() {
            prop_assert!(layer.s.iter().all(|&s| s == 0.0 || s == 1.0));
        }
    }

    #[test]
    fn raising_threshold_never_adds_a_spike(u in -10.0f64..10.0, phi in 0.01f64..5.0, bump in 0.0f64..5.0) {
        prop_assert!(heaviside(u, phi + bump) <= heaviside(u, phi));
    }

    #[test]
    fn zero_everything_stays_zero(topo in topology(), t in 1usize..30) {
        let mut net = build_mtsnn(&topo, 0).unwrap();
        for layer in net.layers_mut() {
            layer.weights.as_mut_slice().fill(0.0);
            if let Some(v) = layer.recurrent.as_mut() {
                v.as_mut_slice().fill(0.0);
            }
        }
        let x = SpikeTensor::zeros(topo.input_size, t, 1000);
        let tr = forward_with_control(&net, &x, Control::default(), topo.task_hidden.is_some()).unwrap();
        for layer in tr.layers() {
            prop_assert!(layer.u.iter().chain(&layer.i).chain(&layer.s).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn task_block_never_feeds_back(mut topo in topology(), seed in 0u64..1000, phi in 0.5f64..6.0) {
        topo.task_hidden.get_or_insert_with(Vec::new);
        let net = build_mtsnn(&topo, seed).unwrap();
        let x = input(topo.input_size, 12, seed + 1);
        let with = forward(&net, &x, phi, true).unwrap();
        let without = forward(&net, &x, phi, false).unwrap();
        prop_assert_eq!(&with.feature, &without.feature);
        prop_assert_eq!(&with.label, &without.label);
        prop_assert!(without.task.is_none());
        let stored: Vec<f64> = net.block(Block::Task).iter().map(|l| l.neuron.threshold).collect();
        prop_assert!(stored.iter().all(|&t| t == topo.neuron.threshold));
    }

    #[test]
    fn backward_is_linear_and_deterministic(topo in topology(), seed in 0u64..1000, k in prop::sample::select(vec![-2.0, -1.0, 0.25, 0.5, 2.0, 8.0])) {
        let net = build_mtsnn(&topo, seed).unwrap();
        let x = input(topo.input_size, 10, seed + 2);
        let tr = forward(&net, &x, 1.0, topo.task_hidden.is_some()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_label = tr.label_output().s.len();
        let lg = LossGrads {
            label: (0..n_label).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            task: tr.task_output().map(|t| (0..t.s.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        };
        let opts = BackwardOptions::default();
        let g = backward(&tr, &net, &lg, &opts).unwrap();
        prop_assert_eq!(&g, &backward(&tr, &net, &lg, &opts).unwrap());
        let mut scaled = g.clone();
        scaled.scale(k);
        prop_assert_eq!(backward(&tr, &net, &lg.scaled(k), &opts).unwrap(), scaled);
        prop_assert!(g.matches(&net) && g.is_finite());
    }
}

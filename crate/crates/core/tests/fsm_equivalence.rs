use msbprune::accel::{AccelRequest, AccelState, ConvAccelerator, TraceDetail, RUN_CYCLES};
use msbprune::conv::conv2d_with_masks;
use msbprune::{ConvLayerSpec, ConvMode, PruneThreshold, QuantTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn operand(rng: &mut ChaCha8Rng) -> i32 {
    match rng.gen_range(0..4) {
        0 => 0,
        1 => rng.gen_range(-8..=8),
        _ => rng.gen_range(-(1 << 14)..=(1 << 14)),
    }
}

#[test]
fn accelerator_matches_conv_engine() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for run in 0..10_000 {
        // the window sits at a random offset inside a larger memory
        let base = rng.gen_range(0..32u32);
        let mut memory: Vec<i32> = (0..base + 16 + 8).map(|_| operand(&mut rng)).collect();
        let window: Vec<i32> = (0..16).map(|_| operand(&mut rng)).collect();
        memory[base as usize..][..16].copy_from_slice(&window);
        let kernel: [i32; 9] = std::array::from_fn(|_| operand(&mut rng));
        let t = PruneThreshold::new(rng.gen_range(1..=40)).unwrap();

        let mut acc = ConvAccelerator::with_kernel(memory.as_slice(), kernel);
        acc.issue(AccelRequest::window(base), t).unwrap();
        assert_eq!(acc.run_to_done().unwrap(), RUN_CYCLES, "run {run}");
        let outputs = acc.read_outputs().unwrap();
        assert_eq!(acc.result_register(), 1);

        let input = QuantTensor::new(vec![1, 4, 4], window, 0).unwrap();
        let layer = ConvLayerSpec::new(
            QuantTensor::new(vec![1, 1, 3, 3], kernel.to_vec(), 0).unwrap(),
            QuantTensor::new(vec![1], vec![0], 0).unwrap(),
        )
        .unwrap();
        let (y, counters, masks) = conv2d_with_masks(&input, &layer, ConvMode::Approx(t)).unwrap();
        assert_eq!(&outputs[..], y.data(), "run {run}");
        let kept = acc.kept_sets();
        for (o, mask) in masks.iter().enumerate() {
            assert_eq!(&kept[o][..], &mask[..], "run {run} output {o}");
        }

        let trace = acc.trace();
        assert_eq!(trace.len() as u64, RUN_CYCLES);
        let mut state = AccelState::GetData;
        for (i, ev) in trace.iter().enumerate() {
            assert!(state.can_transition_to(ev.state), "{state} -> {}", ev.state);
            assert_eq!(ev.cycle, i as u64 + 1);
            state = ev.state;
        }
        assert_eq!(state, AccelState::Done);
        let fetched = trace
            .iter()
            .filter(|e| matches!(e.detail, TraceDetail::Fetch { .. }))
            .count();
        assert_eq!(fetched, 16);
        let evaluated: usize = trace.iter().map(|e| e.evaluated_products()).sum();
        assert_eq!(evaluated as u64, counters.performed);

        acc.acknowledge().unwrap();
        assert_eq!(acc.state(), AccelState::Idle);
        assert_eq!(acc.result_register(), 0);
    }
}

#[test]
fn back_to_back_runs_reuse_the_kernel() {
    let memory: Vec<i32> = (1..=40).collect();
    let mut acc = ConvAccelerator::with_kernel(memory.as_slice(), [1, 0, -1, 2, 0, -2, 1, 0, -1]);
    let t = PruneThreshold::new(62).unwrap();
    let mut outputs = Vec::new();
    for base in [0, 20] {
        acc.issue(AccelRequest::window(base), t).unwrap();
        acc.run_to_done().unwrap();
        outputs.push(acc.read_outputs().unwrap());
        acc.acknowledge().unwrap();
    }
    // linear ramp: the Sobel-like kernel sees a constant horizontal gradient
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], [-8; 4]);
}

use ndarray::{s, Array3, ArrayD, Axis, IxDyn};
use pswm_core::{BlockConfig, BlockStack, Flavor, ParamStore, PssmState, Rng, Scalar, Tape};

fn stack<T: Scalar>(flavor: Flavor, n_blocks: usize, no_mlp: bool, seed: u64) -> (ParamStore<T>, BlockStack) {
    let mut store = ParamStore::new();
    let mut cfg = BlockConfig::new(flavor, 16, 32, n_blocks, 8);
    cfg.no_mlp = no_mlp;
    let blocks = BlockStack::new(&mut store, "blocks", cfg, &mut Rng::new(seed)).unwrap();
    (store, blocks)
}

fn input<T: Scalar>(b: usize, t: usize, d: usize, seed: u64) -> Array3<T> {
    let mut rng = Rng::new(seed);
    Array3::from_shape_fn((b, t, d), |_| T::from_f64(rng.normal()).unwrap())
}

fn parallel<T: Scalar>(blocks: &BlockStack, store: &ParamStore<T>, g: &Array3<T>, s0: &PssmState<T>) -> (ArrayD<T>, PssmState<T>) {
    let tape = Tape::new();
    let (h, s) = blocks.forward(&tape, store, tape.constant(g.clone().into_dyn()), s0).unwrap();
    let out = (*h.value()).clone();
    (out, s)
}

fn chained<T: Scalar>(blocks: &BlockStack, store: &ParamStore<T>, g: &Array3<T>, s0: &PssmState<T>) -> (ArrayD<T>, PssmState<T>) {
    let cache = blocks.step_cache(store).unwrap();
    let mut state = s0.clone();
    let mut outs = Vec::new();
    for t in 0..g.dim().1 {
        let tape = Tape::new();
        let gt = tape.constant(g.index_axis(Axis(1), t).to_owned().into_dyn());
        let (h, next) = blocks.step(&tape, store, &cache, gt, &state).unwrap();
        outs.push((*h.value()).clone());
        state = next;
    }
    let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
    (ndarray::stack(Axis(1), &views).unwrap(), state)
}

fn max_diff<T: Scalar>(a: &ArrayD<T>, b: &ArrayD<T>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b).map(|(x, y)| (x.to_f64().unwrap() - y.to_f64().unwrap()).abs()).fold(0.0, f64::max)
}

fn state_diff<T: Scalar>(a: &PssmState<T>, b: &PssmState<T>) -> f64 {
    a.layers
        .iter()
        .zip(&b.layers)
        .flat_map(|(x, y)| x.s.iter().zip(y.s.iter()).map(|(p, q)| (p - q).norm().to_f64().unwrap()))
        .fold(0.0, f64::max)
}

#[test]
fn parallel_matches_step_through_six_blocks() {
    for flavor in [Flavor::Dplr, Flavor::DiagonalMimo] {
        let (store, blocks) = stack::<f32>(flavor, 6, false, 1);
        let g = input::<f32>(2, 128, 16, 2);
        let s0 = blocks.zero_state(2);
        let (hp, sp) = parallel(&blocks, &store, &g, &s0);
        let (hs, ss) = chained(&blocks, &store, &g, &s0);
        let gap = max_diff(&hp, &hs);
        assert!(gap < 1e-3, "{flavor:?} f32 gap {gap}");
        assert!(state_diff(&sp, &ss) < 1e-3);

        let (store, blocks) = stack::<f64>(flavor, 6, false, 1);
        let g = input::<f64>(2, 128, 16, 2);
        let (hp, _) = parallel(&blocks, &store, &g, &blocks.zero_state(2));
        let (hs, _) = chained(&blocks, &store, &g, &blocks.zero_state(2));
        let gap = max_diff(&hp, &hs);
        assert!(gap < 1e-8, "{flavor:?} f64 gap {gap}");
    }
}

#[test]
fn single_step_sequences_agree() {
    let (store, blocks) = stack::<f32>(Flavor::Dplr, 2, false, 3);
    let g = input::<f32>(3, 1, 16, 4);
    let (hp, _) = parallel(&blocks, &store, &g, &blocks.zero_state(3));
    let (hs, _) = chained(&blocks, &store, &g, &blocks.zero_state(3));
    assert!(max_diff(&hp, &hs) < 1e-5);
}

#[test]
fn state_round_trip() {
    for flavor in [Flavor::Dplr, Flavor::DiagonalMimo] {
        let (store, blocks) = stack::<f64>(flavor, 2, false, 5);
        let g = input::<f64>(2, 40, 16, 6);
        let (whole, s_whole) = parallel(&blocks, &store, &g, &blocks.zero_state(2));
        let first = g.slice(s![.., ..20, ..]).to_owned();
        let second = g.slice(s![.., 20.., ..]).to_owned();
        let (h1, s1) = parallel(&blocks, &store, &first, &blocks.zero_state(2));
        let (h2, s2) = parallel(&blocks, &store, &second, &s1);
        let views = [h1.view(), h2.view()];
        let joined = ndarray::concatenate(Axis(1), &views).unwrap();
        assert!(max_diff(&whole, &joined) < 1e-9);
        assert!(state_diff(&s_whole, &s2) < 1e-9);
        // two single steps continue a parallel prefix
        let (h3, _) = chained(&blocks, &store, &second.slice(s![.., ..2, ..]).to_owned(), &s1);
        assert!(max_diff(&whole.slice(s![.., 20..22, ..]).to_owned().into_dyn(), &h3) < 1e-9);
    }
}

#[test]
fn zero_in_zero_out() {
    for flavor in [Flavor::Dplr, Flavor::DiagonalMimo] {
        let (mut store, blocks) = stack::<f64>(flavor, 3, false, 7);
        let biases: Vec<String> =
            store.iter().filter(|(_, p)| p.name.ends_with(".b")).map(|(_, p)| p.name.clone()).collect();
        for name in biases {
            let shape = store.value(store.id(&name).unwrap()).raw_dim();
            store.set(&name, ArrayD::zeros(shape)).unwrap();
        }
        let g = Array3::<f64>::zeros((2, 16, 16));
        let (h, s) = parallel(&blocks, &store, &g, &blocks.zero_state(2));
        assert!(h.iter().all(|&x| x == 0.0));
        assert!(s.layers.iter().all(|l| l.is_zero()));
    }
}

#[test]
fn no_mlp_changes_outputs_but_not_state_shapes() {
    let (store, blocks) = stack::<f64>(Flavor::Dplr, 2, false, 9);
    let (store2, blocks2) = stack::<f64>(Flavor::Dplr, 2, true, 9);
    let g = input::<f64>(2, 8, 16, 10);
    let (h, s) = parallel(&blocks, &store, &g, &blocks.zero_state(2));
    let (h2, s2) = parallel(&blocks2, &store2, &g, &blocks2.zero_state(2));
    assert!(max_diff(&h, &h2) > 1e-3);
    assert_eq!(s.shapes(), s2.shapes());
    assert!(store2.len() < store.len());
}

#[test]
fn steps_are_deterministic() {
    let (store, blocks) = stack::<f32>(Flavor::DiagonalMimo, 2, false, 11);
    let g = input::<f32>(2, 5, 16, 12);
    let s0 = blocks.zero_state(2);
    assert_eq!(chained(&blocks, &store, &g, &s0).0, chained(&blocks, &store, &g, &s0).0);
}

#[test]
fn every_ssm_parameter_receives_gradient() {
    for flavor in [Flavor::Dplr, Flavor::DiagonalMimo] {
        let (store, blocks) = stack::<f64>(flavor, 2, false, 13);
        let g = input::<f64>(2, 12, 16, 14);
        let tape = Tape::new();
        let (h, _) = blocks.forward(&tape, &store, tape.constant(g.into_dyn()), &blocks.zero_state(2)).unwrap();
        let target = tape.constant(ArrayD::from_shape_fn(IxDyn(&[2, 12, 16]), |i| (i[1] as f64).sin()));
        let grads = tape.backward(h.sub(target).unwrap().square().sum()).unwrap();
        let mut checked = 0;
        for (id, p) in store.iter() {
            if !p.trainable || !p.name.contains(".ssm") {
                continue;
            }
            let gr = grads.param(id).unwrap_or_else(|| panic!("no gradient for {}", p.name));
            assert!(gr.iter().any(|&x| x != 0.0), "{} gradient identically zero", p.name);
            checked += 1;
        }
        assert!(checked >= 8);
    }
}

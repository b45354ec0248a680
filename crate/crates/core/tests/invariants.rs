mod common;

use std::collections::VecDeque;

use common::{block_graph, labeling, random_instance, unary};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tse_core::anatomy::{decompose_nc_layers, layer_flags, refine_layers, AnatomyParams, LayerFlag};
use tse_core::eval::{binarize, evaluate, f_measure, mae, pr_curve, precision_recall, THETA_SQ};
use tse_core::ingest::{Image, LabelMap, Mask};
use tse_core::layer::Layer;
use tse_core::maps::{
    adaptive_center, background_map, build_unary_maps, nc_boundary_map, BackgroundVariant, LayerWeights, MapParams,
};
use tse_core::optimizer::{energy, solve, BackgroundConstraint};
use tse_core::superpixel::{build_region_graph, regionize_labels, segment, RegionGraph, SegmentParams};

fn layer() -> impl Strategy<Value = Layer> {
    (0usize..4).prop_map(|i| Layer::ALL[i])
}

/// Block grid with random intensities and random semantic labels.
fn labeled_grid() -> impl Strategy<Value = (RegionGraph, Vec<Layer>)> {
    (3usize..9, 1usize..7).prop_flat_map(|(rows, cols)| {
        let n = rows * cols;
        (
            proptest::collection::vec(0.0f64..1.0, n),
            proptest::collection::vec(layer(), n),
        )
            .prop_map(move |(intensity, layers)| (block_graph(rows, cols, &intensity), layers))
    })
}

/// Smooth random image: a few horizontal bands plus per-pixel jitter.
fn banded_image() -> impl Strategy<Value = Image> {
    (
        16usize..48,
        24usize..48,
        proptest::collection::vec(0u8..=255, 4),
        any::<u64>(),
    )
        .prop_map(|(w, h, levels, seed)| {
            Image::from_fn(w, h, |x, y| {
                let base = levels[y * levels.len() / h] as u64;
                let jitter = (seed ^ (x as u64 * 73_856_093) ^ (y as u64 * 19_349_663)) % 9;
                (base + jitter).min(255) as u8
            })
            .unwrap()
        })
}

fn connected(region_of: &[u32], w: usize, h: usize, r: u32) -> bool {
    let pixels: Vec<usize> = (0..w * h).filter(|&p| region_of[p] == r).collect();
    let Some(&start) = pixels.first() else { return false };
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut count = 0;
    while let Some(p) = queue.pop_front() {
        count += 1;
        let (x, y) = (p % w, p / w);
        let mut push = |q: usize| {
            if region_of[q] == r && !seen[q] {
                seen[q] = true;
                queue.push_back(q);
            }
        };
        if x > 0 {
            push(p - 1);
        }
        if x + 1 < w {
            push(p + 1);
        }
        if y > 0 {
            push(p - w);
        }
        if y + 1 < h {
            push(p + w);
        }
    }
    count == pixels.len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn superpixels_partition_the_grid(img in banded_image()) {
        let sp = segment(&img, &SegmentParams::default()).unwrap();
        let (w, h) = (img.width(), img.height());
        for r in 0..sp.len() as u32 {
            prop_assert!(connected(sp.region_of(), w, h, r), "region {} is not connected", r);
        }
        let g = build_region_graph(&img, &sp).unwrap();
        prop_assert_eq!(g.regions.iter().map(|r| r.area).sum::<usize>(), w * h);
        for i in 0..g.len() {
            for &j in &g.adjacency[i] {
                prop_assert!(g.adjacency[j].contains(&i));
            }
        }
    }

    #[test]
    fn painted_labels_are_region_majorities(img in banded_image(), salt in any::<u64>()) {
        let sp = segment(&img, &SegmentParams::default()).unwrap();
        let (w, h) = (img.width(), img.height());
        let labels: Vec<u32> = (0..w * h)
            .map(|p| 1 + ((img.pixels()[p] as u64 / 64 + (salt >> (p % 60)) % 2) % 4) as u32)
            .collect();
        let regionized = regionize_labels(&LabelMap::new(w, h, labels.clone()).unwrap(), &sp).unwrap();
        let mut votes = vec![[0usize; 4]; sp.len()];
        for (p, &r) in sp.region_of().iter().enumerate() {
            votes[r as usize][labels[p] as usize - 1] += 1;
        }
        let majority: Vec<Layer> = votes
            .iter()
            .map(|v| {
                let best = *v.iter().max().unwrap();
                Layer::ALL[v.iter().position(|&c| c == best).unwrap()]
            })
            .collect();
        prop_assert_eq!(sp.paint(&regionized.layer_of), sp.paint(&majority));
    }

    #[test]
    fn decomposition_has_three_to_five_ordered_bands((g, _) in labeled_grid()) {
        let ncl = decompose_nc_layers(&g, &AnatomyParams::default()).unwrap();
        prop_assert!((3..=5).contains(&ncl.count()));
        let mean_row = |band: &[usize]| {
            band.iter().map(|&i| g.regions[i].rows.iter().map(|&r| r as f64).sum::<f64>() / g.regions[i].rows.len() as f64).sum::<f64>()
                / band.len() as f64
        };
        let rows: Vec<f64> = ncl.layers().iter().map(|b| mean_row(b)).collect();
        prop_assert!(rows.windows(2).all(|p| p[0] < p[1]), "{:?}", rows);
    }

    #[test]
    fn refinement_is_idempotent_and_skin_only_shrinks((g, layers) in labeled_grid()) {
        let ncl = decompose_nc_layers(&g, &AnatomyParams::default()).unwrap();
        let sa = labeling(&layers);
        let nsa = refine_layers(&sa, &ncl, &g, 0.75).unwrap();
        let again = refine_layers(&labeling(&nsa.layer_of), &ncl, &g, 0.75).unwrap();
        prop_assert_eq!(&again.layer_of, &nsa.layer_of);
        for i in nsa.members(Layer::Skin) {
            prop_assert_eq!(sa.layer_of[i], Layer::Skin);
        }
        prop_assert_eq!(Layer::ALL.iter().map(|&l| nsa.members(l).len()).sum::<usize>(), g.len());
    }

    #[test]
    fn unary_maps_stay_in_the_unit_box((g, layers) in labeled_grid(), variant in any::<bool>(), flag_bits in 0u32..81) {
        let nsa = labeling(&layers);
        let mut flags = layer_flags(&nsa, &g, &AnatomyParams::default());
        for (k, f) in flags.iter_mut().enumerate() {
            *f = [LayerFlag::Smooth, LayerFlag::Normal, LayerFlag::Dark][(flag_bits / 3u32.pow(k as u32) % 3) as usize];
        }
        let variant = if variant { BackgroundVariant::Full } else { BackgroundVariant::NcSquared };
        let (maps, _) = build_unary_maps(&g, &nsa, &flags, &MapParams::default(), variant).unwrap();
        for v in [&maps.foreground, &maps.center, &maps.background, &maps.nc] {
            prop_assert_eq!(v.len(), g.len());
            prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)), "{:?}", v);
        }
        prop_assert!(maps.adaptive_center.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn full_background_reduces_to_nc_squared((g, layers) in labeled_grid()) {
        let nc = nc_boundary_map(&g);
        let n = g.len();
        let weights = LayerWeights { layer_w: [1.0; 4], region_w: vec![1.0; n], mammary_valid: true };
        let t = background_map(&nc, &weights, &vec![1.0; n], &[LayerFlag::Normal; 4], &labeling(&layers), BackgroundVariant::Full);
        let peak = nc.iter().map(|v| v * v).fold(0.0, f64::max);
        for (ti, ni) in t.iter().zip(&nc) {
            prop_assert!((ti - ni * ni / peak).abs() < 1e-12);
        }
    }

    #[test]
    fn adaptive_center_ignores_scale((g, _) in labeled_grid(), f in proptest::collection::vec(0.01f64..1.0, 48), k in 1e-3f64..1e3) {
        let f = &f[..g.len()];
        let scaled: Vec<f64> = f.iter().map(|v| v * k).collect();
        let (a, b) = (adaptive_center(f, &g).unwrap(), adaptive_center(&scaled, &g).unwrap());
        prop_assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    }

    #[test]
    fn nc_map_ignores_region_order((g, _) in labeled_grid(), seed in any::<u64>()) {
        let n = g.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
        // region perm[i] of the original becomes region i
        let mut inverse = vec![0; n];
        perm.iter().enumerate().for_each(|(i, &p)| inverse[p] = i);
        let shuffled = RegionGraph {
            width: g.width,
            height: g.height,
            regions: perm.iter().map(|&p| g.regions[p].clone()).collect(),
            adjacency: perm
                .iter()
                .map(|&p| {
                    let mut adj: Vec<usize> = g.adjacency[p].iter().map(|&q| inverse[q]).collect();
                    adj.sort_unstable();
                    adj
                })
                .collect(),
        };
        let (a, b) = (nc_boundary_map(&g), nc_boundary_map(&shuffled));
        for i in 0..n {
            prop_assert_eq!(b[i], a[perm[i]]);
        }
    }

    #[test]
    fn pairwise_term_is_a_laplacian_form(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, n, false);
        let s: Vec<f64> = (0..n).map(|i| ((seed >> i) % 1000) as f64 / 999.0).collect();
        let zero_w = tse_core::optimizer::PairwiseWeights::from_dense(n, vec![0.0; n * n]).unwrap();
        let e = energy(&s, &inst.maps, &inst.w, &inst.b, &inst.params).unwrap();
        let unary_only = energy(&s, &inst.maps, &zero_w, &inst.b, &inst.params).unwrap();
        // 2 s'Ls with L = D - W
        let mut quad = 0.0;
        for i in 0..n {
            let degree: f64 = inst.w.row(i).iter().sum();
            quad += s[i] * s[i] * degree;
            for j in 0..n {
                quad -= s[i] * inst.w.get(i, j) * s[j];
            }
        }
        prop_assert!(quad >= -1e-9);
        prop_assert!(((e - unary_only) - 2.0 * quad).abs() <= 1e-9 * e.abs().max(1.0));
    }

    #[test]
    fn solver_output_is_feasible(seed in any::<u64>(), n in 2usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inst = random_instance(&mut rng, n, false);
        inst.b.pinned[n - 1] = true;
        let out = solve(&inst.maps, &inst.w, &inst.b, &inst.params).unwrap();
        prop_assert!(out.map.values.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(out.map.values[n - 1], 0.0);
        prop_assert!(out.energies.windows(2).all(|p| p[1] <= p[0] + 1e-9 * p[0].abs().max(1.0)));
    }

    #[test]
    fn log_floor_is_inert_above_eps(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, n, true);
        let eps = inst.params.eps_log;
        let floor = |v: &[f64]| v.iter().map(|x| x.max(eps)).collect::<Vec<f64>>();
        let floored = unary(floor(&inst.maps.foreground), floor(&inst.maps.center), floor(&inst.maps.background));
        let a = solve(&inst.maps, &inst.w, &inst.b, &inst.params).unwrap();
        let b = solve(&floored, &inst.w, &inst.b, &inst.params).unwrap();
        prop_assert_eq!(a.map.values, b.map.values);

        // entries below the floor: energy sees only the floored values
        let mut low = inst.maps.clone();
        low.foreground[0] = 0.0;
        low.background[0] = eps / 10.0;
        let lifted = unary(floor(&low.foreground), floor(&low.center), floor(&low.background));
        let s = vec![0.5; n];
        let b0 = BackgroundConstraint::none(n);
        let (e1, e2) = (
            energy(&s, &low, &inst.w, &b0, &inst.params).unwrap(),
            energy(&s, &lifted, &inst.w, &b0, &inst.params).unwrap(),
        );
        prop_assert!(e1.is_finite() && e1 == e2);
    }

    #[test]
    fn metrics_stay_in_range(
        (w, h) in (8usize..24, 8usize..24),
        pixels in proptest::collection::vec(any::<u8>(), 24 * 24),
        bits in proptest::collection::vec(any::<bool>(), 24 * 24),
    ) {
        let sm = Image::new(w, h, pixels[..w * h].to_vec()).unwrap();
        let gt = Mask::new(w, h, bits[..w * h].to_vec()).unwrap();
        let r = evaluate(&sm, &gt, THETA_SQ).unwrap();
        for v in [r.precision, r.recall, r.f_measure, r.mae] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let curve = pr_curve(&sm, &gt).unwrap();
        for t in 1..=255u8 {
            let (lo, hi) = (binarize(&sm, t - 1), binarize(&sm, t));
            prop_assert!(hi.bits.iter().zip(&lo.bits).all(|(&a, &b)| !a || b), "masks not nested at {}", t);
            let (p, rc) = precision_recall(&hi, &gt).unwrap();
            prop_assert!((curve[t as usize].0 - p).abs() < 1e-12 && (curve[t as usize].1 - rc).abs() < 1e-12);
        }
    }

    #[test]
    fn f_of_equal_rates_is_the_rate(p in 0.0f64..=1.0) {
        prop_assert!((f_measure(p, p, THETA_SQ) - p).abs() < 1e-12);
    }

    #[test]
    fn mae_is_symmetric(a in proptest::collection::vec(0.0f64..=1.0, 1..100), seed in any::<u64>()) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, _)| ((seed >> (i % 60)) % 101) as f64 / 100.0).collect();
        prop_assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
    }
}

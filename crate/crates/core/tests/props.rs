mod common;

use proptest::prelude::*;
use rooflab::cache::{simulate, CacheConfig, LevelConfig, SetIndex};
use rooflab::chart::{render, validate_geometry, ChartOptions, ChartSpec};
use rooflab::gpp::trace::{AccessTrace, ArrayInfo, TraceEvent};
use rooflab::gpp::{reference_result, run_version, synth_problem, Version};
use rooflab::machine::*;
use rooflab::metrics::*;
use rooflab::occupancy::{theoretical_active_warps, LaunchConfig, SMResources};
use rooflab::roofline::*;

fn counters() -> impl Strategy<Value = InstructionCounters> {
    (0u64..1 << 40, 0u64..1 << 40, 0u64..1 << 40, 0u64..1 << 30, 0u64..1 << 30)
        .prop_map(|(dadd, dmul, dfma, ddiv, dother)| InstructionCounters { dadd, dmul, dfma, ddiv, dother })
}

fn machine_with(bw: [f64; 3]) -> MachineDescription {
    let mut m = MachineDescription::bundled_v100();
    for (l, b) in m.levels.iter_mut().zip(bw) {
        l.bandwidth = b;
    }
    m
}

fn record(label: &str, c: InstructionCounters, runtime: f64, bytes: Option<LevelBytes>) -> KernelMetrics {
    KernelMetrics {
        label: label.into(),
        system: "p".into(),
        kernel: None,
        precision: Precision::FP64,
        counters: c,
        bytes,
        runtime,
        registers_per_thread: None,
        threads_per_block: None,
        achieved_warps_per_sm: None,
        note: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, ..ProptestConfig::default() })]

    #[test]
    fn peak_is_multiplicative(u in 1u32..1000, l in 1u32..1000, o in 1u32..4, hz in 1e6f64..5e9, which in 0usize..4) {
        let base = theoretical_peak(u, l, o, hz).unwrap();
        let doubled = match which {
            0 => theoretical_peak(2 * u, l, o, hz),
            1 => theoretical_peak(u, 2 * l, o, hz),
            2 => theoretical_peak(u, l, 2 * o, hz),
            _ => theoretical_peak(u, l, o, 2.0 * hz),
        }.unwrap();
        prop_assert_eq!(doubled, 2.0 * base);
    }

    #[test]
    fn fma_peak_monotone_and_bounded(p in 1e9f64..1e15, r1 in 0.0f64..=1.0, r2 in 0.0f64..=1.0) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let (a, b) = (fma_adjusted_peak(p, lo).unwrap(), fma_adjusted_peak(p, hi).unwrap());
        prop_assert!(a <= b);
        prop_assert!(a >= p / 2.0 && b <= p);
    }

    #[test]
    fn adjusted_balance_scales(p in 1e9f64..1e15, r in 0.0f64..=1.0, bw in 1e8f64..1e14) {
        let lhs = machine_balance(fma_adjusted_peak(p, r).unwrap(), bw).unwrap();
        let rhs = (1.0 + r) / 2.0 * machine_balance(p, bw).unwrap();
        prop_assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * rhs);
    }

    #[test]
    fn machine_json_roundtrip(l1 in 1e9f64..1e14, l2 in 1e9f64..1e14, hbm in 1e9f64..1e14) {
        let m = machine_with([l1, l2, hbm]);
        prop_assert_eq!(MachineDescription::from_json_str(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn flops_are_additive(a in counters(), b in counters(), w in 1u64..8) {
        prop_assert_eq!(total_flops(&(a + b), w).unwrap(), total_flops(&a, w).unwrap() + total_flops(&b, w).unwrap());
    }

    #[test]
    fn fma_ratio_is_scale_invariant(c in counters(), k in 1u64..1000) {
        prop_assume!(c.dadd + c.dmul + c.dfma > 0);
        let small = InstructionCounters { dadd: c.dadd >> 12, dmul: c.dmul >> 12, dfma: c.dfma >> 12, ..c };
        prop_assume!(small.dadd + small.dmul + small.dfma > 0);
        prop_assert_eq!(fma_ratio(&small.scaled(k)).unwrap(), fma_ratio(&small).unwrap());
    }

    #[test]
    fn metrics_json_roundtrip(c in counters(), rt in 1e-6f64..1e3, b in proptest::option::of((1.0f64..1e12, 1.0f64..1e12, 1.0f64..1e12))) {
        let r = record("x", c, rt, b.map(|(l1, l2, hbm)| LevelBytes { l1, l2, hbm }));
        let back = parse_metrics(&metrics_to_json(std::slice::from_ref(&r)), "p").unwrap();
        prop_assert_eq!(back, vec![r]);
    }

    #[test]
    fn intensity_and_throughput_are_homogeneous(f in 0.0f64..1e15, b in 1.0f64..1e13, t in 1e-6f64..1e3, e in -20i32..20) {
        let k = 2f64.powi(e);
        prop_assert_eq!(arithmetic_intensity(k * f, b).unwrap(), k * arithmetic_intensity(f, b).unwrap());
        prop_assert_eq!(achieved_throughput(k * f, t).unwrap(), k * achieved_throughput(f, t).unwrap());
    }

    #[test]
    fn hierarchical_ordering(f in 1.0f64..1e15, hbm in 1.0f64..1e12, x in 1.0f64..100.0, y in 1.0f64..100.0) {
        let l2 = hbm * x;
        let l1 = l2 * y;
        let ai = |b| arithmetic_intensity(f, b).unwrap();
        prop_assert!(ai(l1) <= ai(l2) && ai(l2) <= ai(hbm));
    }

    #[test]
    fn classify_ignores_common_scale(ai in 0.01f64..100.0, bw in 1e10f64..1e13, e in -10i32..10, level in 0usize..3) {
        let k = 2f64.powi(e);
        let m = machine_with([bw, bw, bw]);
        let mut scaled = m.clone();
        for l in &mut scaled.levels { l.bandwidth *= k; }
        for c in &mut scaled.ceilings { c.peak *= k; }
        let p = RooflinePoint { label: "v".into(), level: LevelName::ALL[level], ai, throughput: 1.0, flops: 1.0 };
        prop_assert_eq!(classify(&p, &m, "FP64 FMA").unwrap(), classify(&p, &scaled, "FP64 FMA").unwrap());
    }

    #[test]
    fn cumulative_speedup_is_the_product(runtimes in proptest::collection::vec(1e-3f64..1e3, 1..12)) {
        let recs: Vec<KernelMetrics> = runtimes.iter().enumerate()
            .map(|(i, &t)| record(&format!("v{i}"), InstructionCounters { dfma: 1000, ..Default::default() }, t, None))
            .collect();
        let r = trajectory(&recs, &MachineDescription::bundled_v100(), &TrajectoryOptions::default()).unwrap();
        let product: f64 = r.step_speedups().iter().product();
        prop_assert!((product - r.cumulative_speedup).abs() <= 1e-12 * r.cumulative_speedup.max(1.0) * runtimes.len() as f64);
    }

    #[test]
    fn occupancy_invariants(regs in 1u32..255, tpb_warps in 1u32..=32) {
        let res = SMResources::default();
        let tpb = tpb_warps * 32;
        let o = theoretical_active_warps(LaunchConfig { registers_per_thread: regs, threads_per_block: tpb }, &res).unwrap();
        let more = theoretical_active_warps(LaunchConfig { registers_per_thread: regs + 1, threads_per_block: tpb }, &res).unwrap();
        prop_assert!(more.warps <= o.warps);
        prop_assert!(o.warps <= res.max_warps);
        prop_assert_eq!(o.warps % tpb_warps, 0);
        prop_assert_eq!(o.warps, common::occupancy_brute(regs, tpb));
    }

    #[test]
    fn sim_identities_hold(
        events in proptest::collection::vec((0u8..2, 0u64..512, prop_oneof![Just(8u8), Just(16u8)]), 1..3000),
        l1_ways in 1u32..8, l2_ways in 1u32..16, l1_sets_log in 0u32..4, l2_sets_log in 2u32..6, xor in any::<bool>(),
    ) {
        let arrays = vec![
            ArrayInfo { name: "a".into(), elem_size: 8, extent: 512 * 16 },
            ArrayInfo { name: "b".into(), elem_size: 8, extent: 512 * 16 },
        ];
        let mut t = AccessTrace::new(arrays, 32);
        for (a, i, size) in events {
            t.events.push(TraceEvent { array: a, offset: i * size as u64, size });
        }
        let cfg = CacheConfig {
            l1: LevelConfig { capacity: 64 * l1_ways as u64 * (1 << l1_sets_log), line: 64, associativity: l1_ways },
            l2: LevelConfig { capacity: 64 * l2_ways as u64 * (1 << l2_sets_log), line: 64, associativity: l2_ways },
            index: if xor { SetIndex::Xor } else { SetIndex::Modulo },
        };
        let o = simulate(&t, &cfg).unwrap();
        let sizes: u64 = t.events.iter().map(|e| e.size as u64).sum();
        prop_assert_eq!(o.bytes.l1, sizes as f64);
        prop_assert_eq!(o.bytes.l2, (o.l1.misses * 64) as f64);
        prop_assert_eq!(o.bytes.hbm, (o.l2.misses * 64) as f64);
        prop_assert!(o.bytes.hbm <= o.bytes.l2);
    }

    #[test]
    fn chart_geometry_roundtrips(pts in proptest::collection::vec((0usize..9, 0usize..3, 0.011f64..99.0, 1.1e10f64..9.9e12), 0..30)) {
        let points = pts.into_iter().map(|(v, l, ai, perf)| RooflinePoint {
            label: format!("v{v}"), level: LevelName::ALL[l], ai, throughput: perf, flops: 1.0,
        }).collect();
        let spec = ChartSpec { machine: MachineDescription::bundled_v100(), points, options: ChartOptions::default() };
        let svg = render(&spec).unwrap();
        prop_assert_eq!(&svg, &render(&spec).unwrap());
        let rep = validate_geometry(&svg, &spec).unwrap();
        prop_assert!(rep.is_ok(), "{:?}", rep.mismatches);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn versions_agree_on_random_problems(seed in any::<u64>(), nb in 1usize..6, ngp in 1usize..6, nc in 1usize..40) {
        let p = synth_problem(seed, nb, ngp, nc).unwrap();
        let reference = reference_result(&p);
        for v in Version::ALL {
            let a = run_version(&p, v, false).unwrap();
            prop_assert!(a.result.max_rel_error(&reference) <= 1e-10, "{} on seed {}", v, seed);
            prop_assert_eq!(a.counters, run_version(&p, v, true).unwrap().counters);
        }
    }
}

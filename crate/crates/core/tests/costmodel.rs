use proptest::prelude::*;
use utoe_core::boards::{calibrate, BoardRegistry, BoardSpec, CoreFamily, FitTarget, Measurement};
use utoe_core::compiler::{fuse_operators, FusedKernel};
use utoe_core::model_ir::zoo;

fn lenet_kernels() -> Vec<FusedKernel> {
    fuse_operators(&zoo::lenet5())
}

fn lenet_work() -> (u64, u64) {
    let ks = lenet_kernels();
    (ks.iter().map(|k| k.macs).sum(), ks.iter().map(|k| k.elements).sum())
}

/// Latency written out from the board description alone.
fn reference_latency_s(b: &BoardSpec, kernels: &[FusedKernel]) -> f64 {
    let c = b.coeffs.unwrap_or_else(|| b.core_family.default_coeffs());
    let slow_flash = b.external_flash && !b.cache_enabled;
    let mut total = 0.0;
    for k in kernels {
        let mut cycles = k.macs as f64 * c.cycles_per_mac + k.elements as f64 * c.cycles_per_element;
        if slow_flash {
            cycles *= c.external_flash_penalty;
        }
        total += cycles / b.freq_hz as f64;
    }
    total
}

fn model_latency(name: &str) -> f64 {
    let r = BoardRegistry::builtin();
    let b = r.lookup(name).unwrap();
    lenet_kernels().iter().map(|k| b.latency_s(k)).sum()
}

#[test]
fn latency_matches_the_written_out_formula_on_every_board() {
    let ks = lenet_kernels();
    for b in BoardRegistry::builtin().boards() {
        let got: f64 = ks.iter().map(|k| b.latency_s(k)).sum();
        let want = reference_latency_s(b, &ks);
        assert!((got - want).abs() <= want * 1e-12, "{}: {got} vs {want}", b.name);
    }
}

#[test]
fn frequency_orders_latency_within_a_family() {
    let r = BoardRegistry::builtin();
    let ks = lenet_kernels();
    for family in CoreFamily::ALL {
        let mut boards: Vec<&BoardSpec> =
            r.boards().iter().filter(|b| b.core_family == family && b.flash_penalty() == 1.0).collect();
        boards.sort_by_key(|b| b.freq_hz);
        for w in boards.windows(2) {
            let (a, b) = (reference_latency_s(w[0], &ks), reference_latency_s(w[1], &ks));
            if w[0].freq_hz < w[1].freq_hz {
                assert!(a > b, "{} vs {}", w[0].name, w[1].name);
            } else {
                assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn m0plus_over_m4_at_48_mhz() {
    let ratio = model_latency("samr21-xpro") / model_latency("nucleo-wl55jc");
    let measured: f64 = 182.068 / 98.661;
    assert!((measured - 1.845).abs() < 1e-3);
    assert!((ratio / measured - 1.0).abs() < 0.10, "ratio {ratio}");
    // the dsp + thumb2 core is the faster one
    assert!(ratio > 1.0);
}

#[test]
fn uncached_external_flash_dominates_frequency() {
    let r = BoardRegistry::builtin();
    let (h, s) = (r.lookup("hifive1b").unwrap(), r.lookup("sipeed-longan-nano").unwrap());
    let (th, ts) = (model_latency("hifive1b"), model_latency("sipeed-longan-nano"));
    assert!(th > ts);
    let per_cycle = (th * h.freq_hz as f64) / (ts * s.freq_hz as f64);
    let measured: f64 = (153.747 * 320.0) / (37.789 * 108.0);
    assert!((measured - 12.05).abs() < 0.01);
    assert!((per_cycle / measured - 1.0).abs() < 0.05, "{per_cycle} vs {measured}");
}

#[test]
fn lenet_ordering_across_the_reference_boards() {
    let t = |n| model_latency(n);
    assert!(t("stm32f746g-disco") < t("nucleo-wl55jc"));
    assert!(t("nucleo-wl55jc") < t("samr21-xpro"));
    assert!(t("samr21-xpro") < t("b-l072z-lrwan1"));
    // hifive1b loses to every same-ISA board despite having the highest clock
    for b in BoardRegistry::builtin().boards() {
        if b.core_family == CoreFamily::RiscvRv32 && b.name != "hifive1b" {
            assert!(t("hifive1b") > t(&b.name), "{}", b.name);
        }
    }
}

#[test]
fn m0plus_fit_to_measured_latencies() {
    let r = BoardRegistry::builtin();
    let (macs, elements) = lenet_work();
    let rows = [
        ("b-l072z-lrwan1", 262.187),
        ("samr21-xpro", 182.068),
        ("samr30-xpro", 176.958),
        ("samr34-xpro", 178.708),
        ("arduino-zero", 182.068),
        ("rpi-pico", 70.117),
    ];
    let ms: Vec<Measurement> = rows
        .iter()
        .map(|&(n, t)| Measurement { board: r.lookup(n).unwrap().clone(), macs, elements, latency_s: t * 1e-3 })
        .collect();
    let fits = calibrate(&ms, FitTarget::CyclesPerMac).unwrap();
    let fit = &fits[&CoreFamily::CortexM0Plus];
    assert_eq!(fit.measurements, 6);
    assert!(fit.max_rel_residual <= 0.10, "{fit:?}");
    // refitted coefficients predict every row within the residual
    for m in &ms {
        let mut b = m.board.clone();
        b.coeffs = Some(fit.coeffs);
        let pred = b.cycles(macs, elements) / b.freq_hz as f64;
        assert!((pred / m.latency_s - 1.0).abs() <= fit.max_rel_residual + 1e-12);
    }
}

proptest! {
    #[test]
    fn cycles_are_additive(
        m1 in 0u64..1_000_000, e1 in 0u64..1_000_000,
        m2 in 0u64..1_000_000, e2 in 0u64..1_000_000,
        pick in any::<prop::sample::Index>(),
    ) {
        let r = BoardRegistry::builtin();
        let b = &r.boards()[pick.index(r.boards().len())];
        let joint = b.cycles(m1 + m2, e1 + e2);
        let split = b.cycles(m1, e1) + b.cycles(m2, e2);
        prop_assert!((joint - split).abs() <= joint * 1e-12);
    }

    #[test]
    fn latency_scales_inversely_with_clock(m in 1u64..10_000_000, e in 0u64..1_000_000, k in 2u64..8) {
        let r = BoardRegistry::builtin();
        let base = r.lookup("nrf52dk").unwrap().clone();
        let mut fast = base.clone();
        fast.freq_hz *= k;
        let c = base.cycles(m, e);
        prop_assert_eq!(c, fast.cycles(m, e));
        let ratio = (c / base.freq_hz as f64) / (c / fast.freq_hz as f64);
        prop_assert!((ratio - k as f64).abs() <= k as f64 * f64::EPSILON * 4.0);
    }

    #[test]
    fn calibration_recovers_synthetic_coefficients(mac in 1.0f64..40.0, elem in 0.5f64..10.0, seed in any::<u64>()) {
        let r = BoardRegistry::builtin();
        let truth = utoe_core::boards::CostCoeffs { cycles_per_mac: mac, cycles_per_element: elem, external_flash_penalty: 12.0 };
        let names = ["nrf52dk", "b-l475e-iot01a", "nucleo-wl55jc"];
        let ms: Vec<Measurement> = names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let board = r.lookup(n).unwrap().clone();
                let macs = 1_000 + (seed.rotate_left(7 * i as u32) % 500_000);
                let elements = 100 + (seed.rotate_left(13 * i as u32 + 3) % 50_000) * (i as u64 + 1);
                let mut b = board.clone();
                b.coeffs = Some(truth);
                let latency_s = b.cycles(macs, elements) / b.freq_hz as f64;
                Measurement { board, macs, elements, latency_s }
            })
            .collect();
        // collinear workloads cannot separate the two coefficients
        let det = ms[0].macs as f64 * ms[1].elements as f64 - ms[1].macs as f64 * ms[0].elements as f64;
        prop_assume!(det.abs() > 1e3 * ms[0].macs as f64);
        let fit = &calibrate(&ms, FitTarget::MacAndElement).unwrap()[&CoreFamily::CortexM4];
        prop_assert!((fit.coeffs.cycles_per_mac / mac - 1.0).abs() < 1e-6, "{:?}", fit);
        prop_assert!((fit.coeffs.cycles_per_element / elem - 1.0).abs() < 1e-6, "{:?}", fit);
    }
}

use nas_timer::metrics::{cdf_at, empirical_cdf, reduce, write_ue_csv};
use nas_timer::nas_sim::{
    AmfStats, LinkStats, Outcome, RunTrace, TimerEvent, TimerName, TimerTransition, UeRecord,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

#[test]
fn empirical_cdf_of_exponential_samples_is_close() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let exp = Exp::new(1.0).unwrap();
    let samples: Vec<f64> = (0..10_000).map(|_| exp.sample(&mut rng)).collect();
    let cdf = empirical_cdf(&samples);
    // the sup is reached at a sample point, from either side of the step
    let mut sup: f64 = 0.0;
    let mut below = 0.0;
    for p in &cdf {
        let truth = 1.0 - (-p.value).exp();
        sup = sup
            .max((p.fraction - truth).abs())
            .max((below - truth).abs());
        below = p.fraction;
    }
    assert!(sup < 0.03, "sup {sup}");
}

fn ue() -> impl Strategy<Value = UeRecord> {
    (0u8..3, 0u32..=5, 0.0f64..100.0, 0.0f64..50.0).prop_map(|(o, attempts, active, idle)| {
        let outcome = match (o, attempts) {
            (_, 0) => Outcome::Censored,
            (0, _) => Outcome::Registered,
            (1, _) => Outcome::Failed,
            _ => Outcome::Censored,
        };
        UeRecord {
            ue: 0,
            outcome,
            attempts,
            power_on_time: 0.0,
            registration_time: (outcome == Outcome::Registered).then_some(active),
            active_time: active,
            idle_time: idle,
            energy: active + 0.05 * idle,
        }
    })
}

fn timer_event() -> impl Strategy<Value = TimerEvent> {
    (0usize..4, 0u8..3).prop_map(|(t, x)| TimerEvent {
        time: 0.0,
        ue: 0,
        timer: TimerName::ALL[t],
        transition: [
            TimerTransition::Started,
            TimerTransition::Stopped,
            TimerTransition::Expired,
        ][x as usize],
    })
}

fn trace(num_ues: usize) -> impl Strategy<Value = RunTrace> {
    (
        prop::collection::vec(ue(), num_ues),
        prop::collection::vec(timer_event(), 0..40),
        any::<u64>(),
    )
        .prop_map(move |(mut ues, timer_events, seed)| {
            for (i, u) in ues.iter_mut().enumerate() {
                u.ue = i as u32;
            }
            RunTrace {
                seed,
                num_ues,
                loss_probability: 0.1,
                ues,
                timer_events,
                queue_samples: Vec::new(),
                amf: AmfStats::default(),
                link: LinkStats::default(),
                horizon_exceeded: false,
                end_time: 0.0,
            }
        })
}

proptest! {
    #[test]
    fn pooling_is_order_free_and_additive(traces in prop::collection::vec(trace(12), 1..5)) {
        let pooled = reduce(&traces).unwrap();
        let mut flipped = traces.clone();
        flipped.reverse();
        let other = reduce(&flipped).unwrap();
        // means may differ in the last bits from summation order
        prop_assert!((pooled.mean_energy - other.mean_energy).abs() <= 1e-12 * pooled.mean_energy.max(1.0));
        prop_assert_eq!(&pooled.energy_cdf_all, &other.energy_cdf_all);
        prop_assert_eq!(&pooled.registration_time_cdf, &other.registration_time_cdf);
        prop_assert_eq!(&pooled.attempts_cdf, &other.attempts_cdf);
        prop_assert_eq!(&pooled.timer_counts, &other.timer_counts);
        prop_assert_eq!(pooled.success_fraction, other.success_fraction);

        let parts: Vec<_> = traces.iter().map(|t| reduce(std::slice::from_ref(t)).unwrap()).collect();
        prop_assert_eq!(pooled.powered_on, parts.iter().map(|p| p.powered_on).sum::<usize>());
        prop_assert_eq!(pooled.registered, parts.iter().map(|p| p.registered).sum::<usize>());
        prop_assert_eq!(pooled.failed, parts.iter().map(|p| p.failed).sum::<usize>());
        for t in TimerName::ALL {
            let total: u64 = parts.iter().map(|p| p.timer_counts[&t].expired).sum();
            prop_assert_eq!(pooled.timer_counts[&t].expired, total);
        }
        let weighted: f64 = parts.iter().map(|p| p.mean_energy * p.powered_on as f64).sum();
        if pooled.powered_on > 0 {
            prop_assert!((pooled.mean_energy - weighted / pooled.powered_on as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn outcome_counts_and_conditioning(traces in prop::collection::vec(trace(10), 1..4)) {
        let b = reduce(&traces).unwrap();
        prop_assert_eq!(b.registered + b.failed + b.censored, b.powered_on);
        let off = traces.iter().flat_map(|t| &t.ues).filter(|u| u.attempts == 0).count();
        prop_assert_eq!(b.powered_on + off, traces.len() * 10);
        // conditional CDFs cover exactly the registered UEs
        let reg_mass = |cdf: &[nas_timer::metrics::CdfPoint]| cdf.last().map(|p| p.fraction).unwrap_or(0.0);
        if b.registered > 0 {
            prop_assert_eq!(reg_mass(&b.registration_time_cdf), 1.0);
            prop_assert_eq!(reg_mass(&b.energy_cdf_registered), 1.0);
        } else {
            prop_assert!(b.registration_time_cdf.is_empty());
            prop_assert!(b.mean_registration_time.is_none());
        }
        for t in TimerName::ALL {
            let c = b.timer_counts[&t];
            let r = b.expired_ratio[&t];
            prop_assert!(c.started == 0 && r == 0.0 || (r - c.expired as f64 / c.started as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn cdf_is_a_nondecreasing_step_function(values in prop::collection::vec(-1e3f64..1e3, 1..200), x in -2e3f64..2e3) {
        let cdf = empirical_cdf(&values);
        prop_assert!(cdf.windows(2).all(|w| w[0].value < w[1].value && w[0].fraction < w[1].fraction));
        prop_assert_eq!(cdf.last().unwrap().fraction, 1.0);
        let at = cdf_at(&cdf, x);
        let direct = values.iter().filter(|&&v| v <= x).count() as f64 / values.len() as f64;
        prop_assert!((at - direct).abs() < 1e-12);
    }

    #[test]
    fn ue_csv_has_one_row_per_ue(traces in prop::collection::vec(trace(6), 1..4)) {
        let mut buf = Vec::new();
        write_ue_csv(&traces, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        prop_assert_eq!(lines.next(), Some("ue_id,seed,outcome,attempts,registration_time_s,energy_j"));
        prop_assert_eq!(lines.count(), traces.len() * 6);
    }
}

#[test]
fn pooling_rejects_mixed_cells() {
    let base = RunTrace {
        seed: 1,
        num_ues: 0,
        loss_probability: 0.0,
        ues: Vec::new(),
        timer_events: Vec::new(),
        queue_samples: Vec::new(),
        amf: AmfStats::default(),
        link: LinkStats::default(),
        horizon_exceeded: false,
        end_time: 0.0,
    };
    let other = RunTrace {
        loss_probability: 0.5,
        ..base.clone()
    };
    assert!(reduce(&[base.clone(), other]).is_err());
    let bigger = RunTrace {
        num_ues: 3,
        ..base.clone()
    };
    assert!(reduce(&[base, bigger]).is_err());
}

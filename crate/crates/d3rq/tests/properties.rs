//! Property tests over randomized inputs: wire-protocol round trips and the
//! mass/mean conservation laws of the categorical projection.

use d3rq::distrib::{decode_frame, encode_frame, WireMessage, PROTOCOL_VERSION};
use d3rq::envsim::Observation;
use d3rq::replay::Transition;
use d3rq::valuedist::{expectation, make_support, normalize, project, Logits, Support};
use proptest::prelude::*;

fn observation() -> impl Strategy<Value = Observation> {
    prop_oneof![
        proptest::collection::vec(-1e6f64..1e6, 1..6).prop_map(Observation::Vector),
        (1usize..3, 1usize..4, 1usize..4).prop_flat_map(|(c, h, w)| {
            proptest::collection::vec(0.0f64..=1.0, c * h * w).prop_map(move |data| {
                Observation::Image(d3rq::augment::ImageTensor { channels: c, height: h, width: w, data })
            })
        }),
    ]
}

fn message() -> impl Strategy<Value = WireMessage> {
    prop_oneof![
        (
            observation(),
            proptest::collection::vec(-1.0f64..1.0, 1..4),
            -1e3f64..1e3,
            observation(),
            any::<bool>(),
            any::<bool>(),
            any::<u64>(),
            any::<u32>(),
        )
            .prop_map(|(obs, action, reward, next_obs, terminal, truncated, episode_id, step_index)| {
                WireMessage::Transition(Transition {
                    obs,
                    action,
                    reward,
                    next_obs,
                    terminal,
                    truncated,
                    episode_id,
                    step_index,
                })
            }),
        Just(WireMessage::WeightsRequest),
        Just(WireMessage::Shutdown),
        (any::<u32>()).prop_map(|worker_id| WireMessage::Hello {
            protocol: PROTOCOL_VERSION,
            worker_id
        }),
        (any::<u64>(), any::<u64>(), proptest::collection::vec(-1e3f64..1e3, 1..12)).prop_map(
            |(version, step, data)| {
                let len = data.len();
                WireMessage::WeightsSnapshot {
                    version,
                    step,
                    tensors: vec![(
                        "actor/w0".to_string(),
                        d3rq::netcore::Tensor::from_vec(&[len], data).expect("sized"),
                    )],
                }
            }
        ),
    ]
}

proptest! {
    #[test]
    fn wire_roundtrip_is_identity(msg in message()) {
        let frame = encode_frame(&msg);
        let (decoded, used) = decode_frame(&frame).expect("well-formed frame");
        prop_assert_eq!(used, frame.len());
        prop_assert_eq!(decoded, msg);
    }

    #[test]
    fn truncated_frames_never_decode(msg in message(), cut_fraction in 0.0f64..1.0) {
        let frame = encode_frame(&msg);
        let cut = 1 + ((frame.len() - 2) as f64 * cut_fraction) as usize;
        prop_assert!(decode_frame(&frame[..cut]).is_err());
    }

    #[test]
    fn projection_conserves_mass_and_mean(
        bounds in (-100.0f64..0.0, 1e-3f64..100.0),
        n_atoms in 2usize..64,
        raw in proptest::collection::vec((0.0f64..=1.0, 1e-9f64..1.0), 1..24),
    ) {
        let (v_min, width) = bounds;
        let support = make_support(v_min, v_min + width, n_atoms).expect("support");
        let total: f64 = raw.iter().map(|(_, m)| m).sum();
        let values: Vec<f64> = raw.iter().map(|(t, _)| v_min + t * width).collect();
        let probs: Vec<f64> = raw.iter().map(|(_, m)| m / total).collect();
        let out = project(&std::sync::Arc::new(support), &values, &probs).expect("in bounds");
        let mass: f64 = out.probs.iter().sum();
        prop_assert!((mass - 1.0).abs() < 1e-9);
        let mean_in: f64 = values.iter().zip(&probs).map(|(v, p)| v * p).sum();
        prop_assert!((expectation(&out) - mean_in).abs() < 1e-9 * width.max(1.0));
        prop_assert!(out.probs.iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn softmax_is_normalized_for_any_finite_logits(
        omega in proptest::collection::vec(-600.0f64..600.0, 2..32),
    ) {
        let support = Support::shared(0.0, 1.0, omega.len()).expect("support");
        let dist = normalize(&support, &Logits::new(omega)).expect("finite");
        let total: f64 = dist.probs.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(dist.probs.iter().all(|p| *p >= 0.0));
    }
}

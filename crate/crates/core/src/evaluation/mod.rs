//! Objective metrics (RMSE, PCC, AHR, NAHR) and SD/SI evaluation.

mod evaluate;
mod metrics;
mod report;

pub use evaluate::{condition_ipus, evaluate, predict, IpuPrediction};
pub use metrics::{activation, ahr, nahr, pcc, rmse, ACTIVATION_THRESHOLD};
pub use report::{Activation, Aggregation, Condition, MetricsReport, StreamMetrics};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Stream;
    use crate::model::Ablation;

    fn curves(seed: usize, n: usize) -> Vec<Vec<f64>> {
        (0..9)
            .map(|j| (0..n).map(|i| (((i * 7 + j * 3 + seed) % 11) as f64) / 10.0).collect())
            .collect()
    }

    #[test]
    fn self_comparison_is_perfect() {
        let truth = vec![curves(0, 12), curves(5, 9)];
        for agg in [Aggregation::Concatenated, Aggregation::PerIpuMean] {
            let r = MetricsReport::from_curves(&truth, &truth, Condition::Sd, Ablation::None, agg).unwrap();
            for m in &r.streams {
                assert_eq!(m.rmse, 0.0);
                assert!((m.pcc.unwrap() - 1.0).abs() < 1e-12);
                match m.activation {
                    Some(a) => assert_eq!((a.ahr, a.nahr), (Some(100.0), Some(100.0))),
                    None => assert!(!m.stream.is_action_unit()),
                }
            }
            assert_eq!(r.n_frames, 21);
        }
    }

    #[test]
    fn csv_marks_rotations_and_undefined_values() {
        let truth = vec![vec![vec![0.2; 4]; 9]];
        let r = MetricsReport::from_curves(&truth, &truth, Condition::Si, Ablation::Cmam, Aggregation::Concatenated).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "stream,RMSE,PCC,AHR,NAHR");
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[1], "AU01,0.000000,undefined,undefined,100.000000");
        assert!(lines[7].starts_with("RX,") && lines[7].ends_with(",NA,NA"));
        let json = r.to_json().unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert!(back.stream(Stream::Rz).activation.is_none());
        assert!(json.contains("\"SI\"") && json.contains("\"cmam\""));
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(MetricsReport::from_curves(&[], &[], Condition::Sd, Ablation::None, Aggregation::Concatenated).is_err());
    }
}

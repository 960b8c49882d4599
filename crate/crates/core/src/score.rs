//! Scored (AM, PM) comparisons shared by both registration methods.

use serde::{Deserialize, Serialize};

use crate::camera::CameraParams;
use crate::landmarks::LandmarkSubset;

/// Registration method that produced a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Landmarks(LandmarkSubset),
    Regions,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Landmarks(LandmarkSubset::Set1) => "landmarks-set1",
            Method::Landmarks(LandmarkSubset::Set2) => "landmarks-set2",
            Method::Landmarks(LandmarkSubset::Set3) => "landmarks-set3",
            Method::Regions => "regions",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "regions" => Ok(Method::Regions),
            "landmarks-set1" => Ok(Method::Landmarks(LandmarkSubset::Set1)),
            "landmarks-set2" => Ok(Method::Landmarks(LandmarkSubset::Set2)),
            "landmarks-set3" => Ok(Method::Landmarks(LandmarkSubset::Set3)),
            other => Err(format!(
                "unknown method '{other}' (expected landmarks-set1|landmarks-set2|landmarks-set3|regions)"
            )),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.as_str().to_string()
    }
}

/// Result of registering one photograph against one mesh.
#[derive(Debug, Clone, PartialEq)]
pub enum ComparisonOutcome {
    Scored {
        /// Lower is better: RMSE in pixels or masked DICE error.
        score: f64,
        params: CameraParams,
        restarts: u32,
        evaluations: u64,
        /// Base seed for stochastic methods.
        seed: Option<u64>,
        /// Free-form solver annotations (e.g. coplanar landmarks, no convergence).
        note: Option<String>,
    },
    Unscorable {
        reason: String,
    },
}

/// A scored (AM, PM) cell of the comparison matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonScore {
    pub am_id: String,
    pub pm_id: String,
    pub method: Method,
    /// `+inf` when unscorable (written as `null` in JSON).
    #[serde(with = "inf_as_null")]
    pub score: f64,
    pub unscorable: bool,
    pub seed: Option<u64>,
    pub evaluations: u64,
    pub restarts: u32,
    pub params: Option<CameraParams>,
    pub note: Option<String>,
}

impl ComparisonScore {
    pub fn from_outcome(
        am_id: impl Into<String>,
        pm_id: impl Into<String>,
        method: Method,
        outcome: ComparisonOutcome,
    ) -> Self {
        let (am_id, pm_id) = (am_id.into(), pm_id.into());
        match outcome {
            ComparisonOutcome::Scored {
                score,
                params,
                restarts,
                evaluations,
                seed,
                note,
            } if score.is_finite() => Self {
                am_id,
                pm_id,
                method,
                score,
                unscorable: false,
                seed,
                evaluations,
                restarts,
                params: Some(params),
                note,
            },
            ComparisonOutcome::Scored {
                params,
                restarts,
                evaluations,
                seed,
                ..
            } => Self {
                am_id,
                pm_id,
                method,
                score: f64::INFINITY,
                unscorable: true,
                seed,
                evaluations,
                restarts,
                params: Some(params),
                note: Some("no valid registration found".into()),
            },
            ComparisonOutcome::Unscorable { reason } => Self::unscorable(am_id, pm_id, method, reason),
        }
    }

    pub fn unscorable(
        am_id: impl Into<String>,
        pm_id: impl Into<String>,
        method: Method,
        reason: impl Into<String>,
    ) -> Self {
        Self {
            am_id: am_id.into(),
            pm_id: pm_id.into(),
            method,
            score: f64::INFINITY,
            unscorable: true,
            seed: None,
            evaluations: 0,
            restarts: 0,
            params: None,
            note: Some(reason.into()),
        }
    }
}

/// JSON has no infinity; unscorable scores travel as `null`.
mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in [
            Method::Regions,
            Method::Landmarks(LandmarkSubset::Set1),
            Method::Landmarks(LandmarkSubset::Set2),
            Method::Landmarks(LandmarkSubset::Set3),
        ] {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("landmarks".parse::<Method>().is_err());
    }

    #[test]
    fn infinite_score_becomes_unscorable() {
        let s = ComparisonScore::from_outcome(
            "a",
            "b",
            Method::Regions,
            ComparisonOutcome::Scored {
                score: f64::INFINITY,
                params: CameraParams::default(),
                restarts: 3,
                evaluations: 10,
                seed: Some(1),
                note: None,
            },
        );
        assert!(s.unscorable);
        assert_eq!(s.restarts, 3);
    }

    #[test]
    fn unscorable_round_trips_through_json() {
        let s = ComparisonScore::unscorable("a", "b", Method::Regions, "why");
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"score\":null"));
        let back: ComparisonScore = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}

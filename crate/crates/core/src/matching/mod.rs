//! 2D-2D correspondences between the query image and the rendered frame.
//!
//! [`Matcher`] is the extension point; two implementations ship:
//! a ground-truth oracle for controlled experiments and a classical
//! corner/patch matcher.

mod classical;
mod oracle;

use serde::{Deserialize, Serialize};

use crate::geometry::{Pixel, Pose};
use crate::image::Image;
use crate::renderer::RgbdFrame;

pub use classical::{detect_corners, match_classical, ClassicalParams, Keypoint};
pub use oracle::{match_oracle, OracleParams};

/// One correspondence: `query` pixel in the query image, `rendered` pixel in the rendered image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub query: Pixel,
    pub rendered: Pixel,
    /// Match confidence in `[0, 1]`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    pub pairs: Vec<Match>,
    /// Ground-truth outlier flags, one per pair, when the matcher knows them
    /// (the oracle does; real matchers do not).
    pub outlier_labels: Option<Vec<bool>>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Anything that can produce correspondences between a query image and a rendered frame.
pub trait Matcher {
    fn find_matches(&self, query: &Image, rendered: &RgbdFrame) -> MatchSet;
}

/// Oracle matcher bound to the query's ground-truth pose.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMatcher {
    pub params: OracleParams,
    pub query_pose: Pose,
}

impl Matcher for OracleMatcher {
    fn find_matches(&self, _query: &Image, rendered: &RgbdFrame) -> MatchSet {
        match_oracle(rendered, &self.query_pose, &rendered.intrinsics, &self.params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalMatcher(pub ClassicalParams);

impl Matcher for ClassicalMatcher {
    fn find_matches(&self, query: &Image, rendered: &RgbdFrame) -> MatchSet {
        match_classical(query, &rendered.color, &self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatcherKind {
    Oracle,
    Classical,
}

impl std::str::FromStr for MatcherKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "classical" => Ok(Self::Classical),
            other => Err(format!("unknown matcher '{other}' (expected oracle|classical)")),
        }
    }
}

/// Matcher selection plus the parameters of both kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum MatcherConfig {
    Oracle(OracleMatcher),
    Classical(ClassicalParams),
}

impl MatcherConfig {
    pub fn kind(&self) -> MatcherKind {
        match self {
            Self::Oracle(_) => MatcherKind::Oracle,
            Self::Classical(_) => MatcherKind::Classical,
        }
    }
}

impl Matcher for MatcherConfig {
    fn find_matches(&self, query: &Image, rendered: &RgbdFrame) -> MatchSet {
        match self {
            Self::Oracle(m) => m.find_matches(query, rendered),
            Self::Classical(p) => match_classical(query, &rendered.color, p),
        }
    }
}

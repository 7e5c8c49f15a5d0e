//! Timestamped camera trajectories.

use crate::error::{Error, Result};
use crate::geometry::Pose;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub stamps: Vec<f64>,
    pub poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(stamps: Vec<f64>, poses: Vec<Pose>) -> Result<Self> {
        if stamps.len() != poses.len() {
            return Err(Error::invalid("trajectory stamps and poses differ in length"));
        }
        let mut t = Self::new();
        for (s, p) in stamps.into_iter().zip(poses) {
            t.push(s, p)?;
        }
        Ok(t)
    }

    /// Appends a pose; timestamps must increase strictly.
    pub fn push(&mut self, stamp: f64, pose: Pose) -> Result<()> {
        if !stamp.is_finite() {
            return Err(Error::invalid("timestamp must be finite"));
        }
        if let Some(&last) = self.stamps.last() {
            if stamp <= last {
                return Err(Error::invalid(format!(
                    "timestamp {stamp} does not follow {last}"
                )));
            }
        }
        self.stamps.push(stamp);
        self.poses.push(pose);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &Pose)> {
        self.stamps.iter().copied().zip(&self.poses)
    }

    /// Applies `t` on the left of every pose.
    pub fn transformed(&self, t: &Pose) -> Self {
        Self {
            stamps: self.stamps.clone(),
            poses: self.poses.iter().map(|p| t.compose(p)).collect(),
        }
    }
}

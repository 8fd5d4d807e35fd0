use std::fmt::Write as _;
use std::path::Path;

use super::Pose;
use crate::{Error, Result};

/// Timestamp → pose table, one line per frame:
/// `timestamp tx ty tz qx qy qz qw`.
///
/// Lookups are exact; there is no interpolation between entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    entries: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(f64, Pose)>) -> Self {
        Self { entries }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, path)
    }

    pub fn parse_str(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| Error::parse(origin, idx + 1, format!("bad number '{t}'"))))
                .collect::<Result<_>>()?;
            let [ts, tx, ty, tz, qx, qy, qz, qw] = nums[..] else {
                return Err(Error::parse(origin, idx + 1, format!("expected 8 numbers, found {}", nums.len())));
            };
            let pose = Pose::from_parts([tx, ty, tz], [qx, qy, qz, qw])
                .map_err(|e| Error::parse(origin, idx + 1, e.to_string()))?;
            if entries.iter().any(|(t, _)| *t == ts) {
                return Err(Error::parse(origin, idx + 1, format!("duplicate timestamp {ts}")));
            }
            entries.push((ts, pose));
        }
        Ok(Self { entries })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
        for (ts, pose) in &self.entries {
            let t = pose.translation;
            let [qx, qy, qz, qw] = pose.quaternion_xyzw();
            let _ = writeln!(out, "{ts} {} {} {} {qx} {qy} {qz} {qw}", t.x, t.y, t.z);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn pose_at(&self, timestamp: f64) -> Option<Pose> {
        self.entries.iter().find(|(t, _)| *t == timestamp).map(|(_, p)| *p)
    }

    pub fn entries(&self) -> &[(f64, Pose)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_lookup_only() {
        let t = Trajectory::parse_str("0.5 1 2 3 0 0 0 1\n", Path::new("t")).unwrap();
        assert_eq!(t.pose_at(0.5).unwrap().translation.x, 1.0);
        assert!(t.pose_at(0.5000001).is_none());
    }

    #[test]
    fn text_round_trip() {
        let t = Trajectory::new(vec![
            (0.1, Pose::from_parts([1.5, -2.0, 1.08], [0.0, 0.0, 0.0, 1.0]).unwrap()),
            (1.0 / 3.0, Pose::identity()),
        ]);
        let back = Trajectory::parse_str(&t.to_text(), Path::new("t")).unwrap();
        assert_eq!(back.entries()[1].0, 1.0 / 3.0);
        assert_eq!(back.entries()[0].1.translation, t.entries()[0].1.translation);
    }

    #[test]
    fn malformed_line() {
        let err = Trajectory::parse_str("# c\n0 1 2\n", Path::new("t")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }
}

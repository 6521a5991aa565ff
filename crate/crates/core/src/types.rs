//! Domain types shared by every pipeline and evaluation stage.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn right(&self) -> u64 {
        u64::from(self.x) + u64::from(self.w)
    }

    pub fn bottom(&self) -> u64 {
        u64::from(self.y) + u64::from(self.h)
    }

    /// Checks `w, h > 0` and that the box lies inside a `width × height` host.
    pub fn check_within(&self, width: u32, height: u32) -> Result<()> {
        if self.w == 0 || self.h == 0 {
            return Err(Error::domain(format!("degenerate box {self}")));
        }
        if self.right() > u64::from(width) || self.bottom() > u64::from(height) {
            return Err(Error::domain(format!(
                "box {self} exceeds image bounds {width}x{height}"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, px: u32, py: u32) -> bool {
        px >= self.x
            && py >= self.y
            && u64::from(px) < self.right()
            && u64::from(py) < self.bottom()
    }

    /// Box `inner`, given in this box's local coordinates, mapped back to the host frame.
    pub fn compose(&self, inner: BBox) -> BBox {
        BBox::new(self.x + inner.x, self.y + inner.y, inner.w, inner.h)
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        u64::from(self.x) < other.right()
            && u64::from(other.x) < self.right()
            && u64::from(self.y) < other.bottom()
            && u64::from(other.y) < self.bottom()
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{}x{})", self.x, self.y, self.w, self.h)
    }
}

/// Handle to an image on disk. `content_hash` digests decoded pixels, not file bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub content_hash: String,
}

/// A localized subject inside a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectInstance {
    pub frame: ImageRef,
    pub entity: String,
    #[serde(default)]
    pub named_entity: bool,
    /// Subject identity (character name, object id). Distinct identities make negatives.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryTag {
    Animal,
    Human,
    Object,
    Landmark,
    MultiSubject,
}

impl CategoryTag {
    pub const ALL: [CategoryTag; 5] = [
        CategoryTag::Animal,
        CategoryTag::Human,
        CategoryTag::Object,
        CategoryTag::Landmark,
        CategoryTag::MultiSubject,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CategoryTag::Animal => "animal",
            CategoryTag::Human => "human",
            CategoryTag::Object => "object",
            CategoryTag::Landmark => "landmark",
            CategoryTag::MultiSubject => "multi_subject",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            CategoryTag::Animal => "Animal",
            CategoryTag::Human => "Human",
            CategoryTag::Object => "Object",
            CategoryTag::Landmark => "Landmark",
            CategoryTag::MultiSubject => "Multi-subj.",
        }
    }
}

impl std::str::FromStr for CategoryTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CategoryTag::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::domain(format!("unknown category {s:?}")))
    }
}

impl fmt::Display for CategoryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Binary label, serialized as `0` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Label::Pos
        } else {
            Label::Neg
        }
    }

    pub fn is_pos(self) -> bool {
        self == Label::Pos
    }

    pub fn bit(self) -> u8 {
        u8::from(self)
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::Neg => 0,
            Label::Pos => 1,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Neg),
            1 => Ok(Label::Pos),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

/// Textual-alignment and subject-preservation scores for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub ta: f64,
    pub sp: f64,
}

impl ScorePair {
    pub fn new(ta: f64, sp: f64) -> Result<Self> {
        if !ta.is_finite() || !sp.is_finite() {
            return Err(Error::Score(format!("non-finite score pair ({ta}, {sp})")));
        }
        Ok(Self { ta, sp })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_bounds() {
        assert!(BBox::new(0, 0, 100, 100).check_within(100, 100).is_ok());
        assert!(BBox::new(1, 0, 100, 100).check_within(100, 100).is_err());
        assert!(BBox::new(0, 0, 0, 10).check_within(100, 100).is_err());
        assert!(BBox::new(5, 5, 10, 0).check_within(100, 100).is_err());
    }

    #[test]
    fn label_serde() {
        assert_eq!(serde_json::to_string(&Label::Pos).unwrap(), "1");
        assert_eq!(serde_json::from_str::<Label>("0").unwrap(), Label::Neg);
        assert!(serde_json::from_str::<Label>("2").is_err());
    }

    #[test]
    fn category_parse() {
        assert_eq!("Animal".parse::<CategoryTag>().unwrap(), CategoryTag::Animal);
        assert_eq!(
            "multi_subject".parse::<CategoryTag>().unwrap(),
            CategoryTag::MultiSubject
        );
        assert!("style".parse::<CategoryTag>().is_err());
    }
}

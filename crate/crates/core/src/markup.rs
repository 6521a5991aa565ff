//! `<u>…</u>` subject markup carried by prompts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OPEN: &str = "<u>";
pub const CLOSE: &str = "</u>";

/// Prompt text with exactly one non-empty `<u>…</u>` span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MarkedPrompt {
    text: String,
    /// Byte range of the span content, tags excluded.
    start: usize,
    end: usize,
}

impl MarkedPrompt {
    pub fn parse(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let opens: Vec<usize> = text.match_indices(OPEN).map(|(i, _)| i).collect();
        let closes: Vec<usize> = text.match_indices(CLOSE).map(|(i, _)| i).collect();
        if opens.len() != 1 || closes.len() != 1 {
            return Err(Error::Parse(format!(
                "expected exactly one {OPEN}…{CLOSE} span, found {} open / {} close tags",
                opens.len(),
                closes.len()
            )));
        }
        let start = opens[0] + OPEN.len();
        let end = closes[0];
        if end < start {
            return Err(Error::Parse("closing tag precedes opening tag".into()));
        }
        if text[start..end].trim().is_empty() {
            return Err(Error::Parse("empty subject span".into()));
        }
        Ok(Self { text, start, end })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    /// Byte range including the tags.
    pub fn tagged_span(&self) -> (usize, usize) {
        (self.start - OPEN.len(), self.end + CLOSE.len())
    }

    pub fn subject(&self) -> &str {
        &self.text[self.start..self.end]
    }

    /// Text with the markup removed.
    pub fn plain(&self) -> String {
        let (ts, te) = self.tagged_span();
        format!(
            "{}{}{}",
            &self.text[..ts],
            self.subject(),
            &self.text[te..]
        )
    }
}

impl TryFrom<String> for MarkedPrompt {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::parse(s)
    }
}

impl From<MarkedPrompt> for String {
    fn from(p: MarkedPrompt) -> String {
        p.text
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_span() {
        let p = MarkedPrompt::parse("A <u>dog</u> runs on grass").unwrap();
        assert_eq!(p.subject(), "dog");
        assert_eq!(p.plain(), "A dog runs on grass");
        assert_eq!(&p.text()[p.span().0..p.span().1], "dog");
    }

    #[test]
    fn span_at_edges() {
        let p = MarkedPrompt::parse("<u>dog</u> runs").unwrap();
        assert_eq!(p.tagged_span().0, 0);
        let p = MarkedPrompt::parse("a running <u>dog</u>").unwrap();
        assert_eq!(p.tagged_span().1, p.text().len());
        let back: MarkedPrompt = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn rejects_bad_markup() {
        assert!(MarkedPrompt::parse("no span").is_err());
        assert!(MarkedPrompt::parse("<u>a</u> and <u>b</u>").is_err());
        assert!(MarkedPrompt::parse("</u>a<u>").is_err());
        assert!(MarkedPrompt::parse("<u> </u>").is_err());
    }
}

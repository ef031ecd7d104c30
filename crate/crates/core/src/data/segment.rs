use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How raw text is divided into the ordered segments the text encoder sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SegmentationPolicy {
    #[default]
    Sentence,
    HalfSentence,
    FixedTokenWindow { size: usize },
}

/// Splits `raw` into segments. Whitespace runs (newlines included) collapse to
/// a single space; a boundary is a terminator followed by whitespace or the
/// end of the text.
pub fn segment_text(raw: &str, policy: SegmentationPolicy) -> Result<Vec<String>> {
    let normalized = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    if normalized.is_empty() {
        return Err(Error::InvalidInput("cannot segment empty text".into()));
    }
    let terminators: &[char] = match policy {
        SegmentationPolicy::Sentence => &['.', '!', '?'],
        SegmentationPolicy::HalfSentence => &['.', '!', '?', ',', ';'],
        SegmentationPolicy::FixedTokenWindow { size } => {
            if size == 0 {
                return Err(Error::InvalidConfig("token window size must be ≥ 1".into()));
            }
            let tokens: Vec<&str> = normalized.split(' ').collect();
            return Ok(tokens.chunks(size).map(|c| c.join(" ")).collect());
        }
    };
    let chars: Vec<char> = normalized.chars().collect();
    let mut segments = Vec::new();
    let mut current = String::new();
    for (i, &ch) in chars.iter().enumerate() {
        current.push(ch);
        let at_boundary = chars.get(i + 1).is_none_or(|next| *next == ' ');
        if terminators.contains(&ch) && at_boundary {
            let seg = current.trim();
            if !seg.is_empty() {
                segments.push(seg.to_string());
            }
            current.clear();
        }
    }
    let tail = current.trim();
    if !tail.is_empty() {
        segments.push(tail.to_string());
    }
    Ok(segments)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_policy() {
        assert_eq!(
            segment_text("A. B.", SegmentationPolicy::Sentence).unwrap(),
            vec!["A.", "B."]
        );
    }

    #[test]
    fn half_sentence_policy() {
        assert_eq!(
            segment_text("A, b. C.", SegmentationPolicy::HalfSentence).unwrap(),
            vec!["A,", "b.", "C."]
        );
    }

    #[test]
    fn fixed_window_sizes() {
        let segs = segment_text(
            "t1 t2 t3 t4 t5 t6 t7",
            SegmentationPolicy::FixedTokenWindow { size: 3 },
        )
        .unwrap();
        let sizes: Vec<usize> = segs.iter().map(|s| s.split(' ').count()).collect();
        assert_eq!(sizes, vec![3, 3, 1]);
    }

    #[test]
    fn empty_text_is_an_error() {
        assert!(segment_text("  \n ", SegmentationPolicy::Sentence).is_err());
    }

    #[test]
    fn decimal_points_do_not_split() {
        assert_eq!(
            segment_text("Rose 2.5 mm today. Calm.", SegmentationPolicy::Sentence).unwrap(),
            vec!["Rose 2.5 mm today.", "Calm."]
        );
    }

    #[test]
    fn newline_joined_segments_round_trip() {
        let segs = vec!["cold front ahead.".to_string(), "winds steady.".to_string()];
        let joined = segs.join("\n");
        assert_eq!(segment_text(&joined, SegmentationPolicy::Sentence).unwrap(), segs);
    }

    #[test]
    fn unterminated_tail_is_kept() {
        assert_eq!(
            segment_text("One. two", SegmentationPolicy::Sentence).unwrap(),
            vec!["One.", "two"]
        );
    }
}

//! Two-stage validity screening for multiple-choice evaluation response logs.
//!
//! `mcscreen` answers one question about a response log before anyone
//! interprets its accuracy numbers: are the responses a valid measurement of
//! item-level ability, or a content-blind structural artefact such as
//! positional collapse? The screen has two independent stages:
//!
//! 1. **Distributional screening** ([`distribution`]): the histogram of chosen
//!    answer positions is summarised by normalised entropy, modal and top-3
//!    concentration, and Jensen-Shannon / total-variation distance from the
//!    honest baseline. A cell is *flagged* when entropy is low and modal
//!    concentration is high.
//! 2. **Content-engagement testing** ([`engagement`]): the Spearman
//!    correlation between item difficulty (defined behaviourally from the
//!    honest condition) and item-level correctness, with bootstrap confidence
//!    intervals. A near-zero correlation marks *content-blind* responding.
//!
//! The two verdicts are cross-tabulated in [`concordance`]; disagreement
//! between them is informative, not an error. [`inference`] adds trend tests
//! across an ordered instruction ladder, paired bootstrap contrasts between
//! adjacent conditions, and accuracy-by-correct-position slopes. [`glmm`] fits
//! the random-intercept logistic regression of correctness on position,
//! condition, and their interaction. [`simulate`] generates synthetic cells
//! from parametric response regimes and serves as the ground-truth oracle for
//! the whole pipeline, and [`report`] orchestrates everything from a single
//! config file into a machine-readable report bundle.
//!
//! Each major capability has a runnable example under `examples/`; the
//! `mcscreen` binary exposes the same stages as subcommands.

pub mod concordance;
pub mod corpus;
pub mod distribution;
pub mod engagement;
pub mod glmm;
pub mod inference;
pub mod report;
pub mod simulate;

pub(crate) mod stats;

/// Number of answer positions on a conforming item (options A through J).
pub const OPTION_COUNT: usize = 10;

/// Maps a 0-based position index to its option letter (0 -> 'A' ... 9 -> 'J').
///
/// Positions are stored as integers everywhere inside the library; letters
/// appear only at ingest and report boundaries.
pub fn position_letter(position: usize) -> char {
    debug_assert!(position < OPTION_COUNT);
    (b'A' + position as u8) as char
}

/// Parses an option letter (A-J, case-insensitive) to its 0-based position.
pub fn letter_position(letter: char) -> Option<usize> {
    let upper = letter.to_ascii_uppercase();
    if upper.is_ascii_uppercase() {
        let idx = (upper as u8 - b'A') as usize;
        if idx < OPTION_COUNT {
            return Some(idx);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn letters_round_trip() {
        for p in 0..OPTION_COUNT {
            assert_eq!(letter_position(position_letter(p)), Some(p));
        }
        assert_eq!(position_letter(4), 'E');
        assert_eq!(letter_position('k'), None);
        assert_eq!(letter_position('K'), None);
        assert_eq!(letter_position('a'), Some(0));
    }
}

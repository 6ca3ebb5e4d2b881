//! Closed-form multiply-accumulate counts for the MSA variants.
//!
//! Window, shuffle-window, and spectral attention are linear in HW; global
//! attention's score term is quadratic.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MsaVariant {
    Window,
    ShuffleWindow,
    Spectral,
    Global,
}

impl MsaVariant {
    pub fn name(self) -> &'static str {
        match self {
            MsaVariant::Window => "window",
            MsaVariant::ShuffleWindow => "shuffle_window",
            MsaVariant::Spectral => "spectral",
            MsaVariant::Global => "global",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "window" => Some(MsaVariant::Window),
            "shuffle_window" | "shuffle-window" => Some(MsaVariant::ShuffleWindow),
            "spectral" => Some(MsaVariant::Spectral),
            "global" => Some(MsaVariant::Global),
            _ => None,
        }
    }
}

/// Multiply-accumulate census, split into the attention term (QK^T and A.V)
/// and the projection term (Q/K/V/output maps, depthwise bridge).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlopCount {
    pub scores: u64,
    pub proj: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.scores + self.proj
    }
}

/// Analytic MAC counts for one attention pass over a `C x H x W` map with
/// window `M` and `heads` heads.
///
/// Per-pass score terms: window `2 * HW * M^2 * C`, spectral
/// `2 * C^2 * HW / heads`, global `2 * C * (HW)^2`. Projections cost
/// `4 * C^2 * HW` per pass; the shuffle-window variant runs two window passes
/// plus an `M x M` depthwise bridge.
pub fn count_flops(
    variant: MsaVariant,
    c: usize,
    h: usize,
    w: usize,
    m: usize,
    heads: usize,
) -> FlopCount {
    let (c, hw, m, heads) = (c as u64, (h * w) as u64, m as u64, heads.max(1) as u64);
    let proj_one = 4 * c * c * hw;
    match variant {
        MsaVariant::Window => FlopCount {
            scores: 2 * hw * m * m * c,
            proj: proj_one,
        },
        MsaVariant::ShuffleWindow => FlopCount {
            scores: 4 * hw * m * m * c,
            proj: 2 * proj_one + m * m * c * hw,
        },
        MsaVariant::Spectral => FlopCount {
            scores: 2 * c * c * hw / heads,
            proj: proj_one,
        },
        MsaVariant::Global => FlopCount {
            scores: 2 * c * hw * hw,
            proj: proj_one,
        },
    }
}

pub fn flop_csv_header() -> &'static str {
    "variant,C,H,W,M,heads,macs_scores,macs_proj,macs_total"
}

pub fn flop_csv_row(
    variant: MsaVariant,
    c: usize,
    h: usize,
    w: usize,
    m: usize,
    heads: usize,
) -> String {
    let f = count_flops(variant, c, h, w, m, heads);
    format!(
        "{},{},{},{},{},{},{},{},{}",
        variant.name(),
        c,
        h,
        w,
        m,
        heads,
        f.scores,
        f.proj,
        f.total()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_hw_doubles_linear_variants() {
        for variant in [MsaVariant::Window, MsaVariant::ShuffleWindow, MsaVariant::Spectral] {
            let one = count_flops(variant, 32, 8, 8, 4, 2);
            let two = count_flops(variant, 32, 16, 8, 4, 2);
            assert_eq!(two.scores, 2 * one.scores, "{variant:?}");
            assert_eq!(two.proj, 2 * one.proj, "{variant:?}");
        }
    }

    #[test]
    fn doubling_hw_quadruples_global_scores() {
        let one = count_flops(MsaVariant::Global, 32, 8, 8, 4, 2);
        let two = count_flops(MsaVariant::Global, 32, 16, 8, 4, 2);
        assert_eq!(two.scores, 4 * one.scores);
    }

    #[test]
    fn full_size_window_matches_global_score_term() {
        // M = H = W collapses the partition to one global window
        let (h, w) = (8, 8);
        let win = count_flops(MsaVariant::Window, 16, h, w, h, 2);
        let glob = count_flops(MsaVariant::Global, 16, h, w, h, 2);
        assert_eq!(win.scores, glob.scores);
    }

    #[test]
    fn total_is_sum_of_parts() {
        let f = count_flops(MsaVariant::ShuffleWindow, 31, 32, 32, 4, 2);
        assert_eq!(f.total(), f.scores + f.proj);
    }

    #[test]
    fn csv_row_shape() {
        let row = flop_csv_row(MsaVariant::Spectral, 31, 16, 16, 4, 1);
        assert_eq!(row.split(',').count(), flop_csv_header().split(',').count());
        assert!(row.starts_with("spectral,31,16,16,4,1,"));
    }
}

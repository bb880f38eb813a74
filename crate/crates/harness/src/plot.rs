//! Per-figure plot data: one row per pruning rate, one column per series,
//! each value the median over seeds.

use std::fmt;
use std::io;
use std::str::FromStr;

use frae_prune_core::pa_loss::PerturbationKind;
use frae_prune_core::params::Scope;

use crate::protocol::{Arm, ResultRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Figure {
    /// Baseline post-prune fitness for both scopes against the reference.
    Fig1,
    /// Whole-model post-prune fitness, baseline vs. linear PA.
    Fig2,
    /// Decoder-only post-prune fitness, baseline vs. linear PA.
    Fig3,
    /// Whole-model post-prune fitness for the baseline and three PA kinds.
    Fig4,
    /// Whole-model fitness after PA training, before pruning.
    Fig5,
    /// Post-fine-tune fitness for both arms and both scopes.
    Fig6,
}

impl Figure {
    pub const ALL: [Figure; 6] = [
        Figure::Fig1,
        Figure::Fig2,
        Figure::Fig3,
        Figure::Fig4,
        Figure::Fig5,
        Figure::Fig6,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Figure::Fig1 => "fig1",
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
            Figure::Fig6 => "fig6",
        }
    }

    pub fn series(&self) -> Vec<Series> {
        use Quantity::*;
        use Scope::*;
        let linear = Some(PerturbationKind::Linear);
        match self {
            Figure::Fig1 => vec![
                Series::new("reference", Arm::Baseline, WholeModel, None, PrePrune),
                Series::new(
                    "baseline-whole_model",
                    Arm::Baseline,
                    WholeModel,
                    None,
                    PostPrune,
                ),
                Series::new(
                    "baseline-decoder_only",
                    Arm::Baseline,
                    DecoderOnly,
                    None,
                    PostPrune,
                ),
            ],
            Figure::Fig2 => vec![
                Series::new("baseline", Arm::Baseline, WholeModel, None, PostPrune),
                Series::new("pa-linear", Arm::Pa, WholeModel, linear, PostPrune),
            ],
            Figure::Fig3 => vec![
                Series::new("baseline", Arm::Baseline, DecoderOnly, None, PostPrune),
                Series::new("pa-linear", Arm::Pa, DecoderOnly, linear, PostPrune),
            ],
            Figure::Fig4 => vec![
                Series::new("baseline", Arm::Baseline, WholeModel, None, PostPrune),
                Series::new("pa-linear", Arm::Pa, WholeModel, linear, PostPrune),
                Series::new(
                    "pa-square",
                    Arm::Pa,
                    WholeModel,
                    Some(PerturbationKind::Square),
                    PostPrune,
                ),
                Series::new(
                    "pa-cube",
                    Arm::Pa,
                    WholeModel,
                    Some(PerturbationKind::Cube),
                    PostPrune,
                ),
            ],
            Figure::Fig5 => vec![
                Series::new("reference", Arm::Baseline, WholeModel, None, PrePrune),
                Series::new("pa-linear", Arm::Pa, WholeModel, linear, PrePrune),
            ],
            Figure::Fig6 => vec![
                Series::new(
                    "baseline-whole_model",
                    Arm::Baseline,
                    WholeModel,
                    None,
                    PostFinetune,
                ),
                Series::new(
                    "pa-linear-whole_model",
                    Arm::Pa,
                    WholeModel,
                    linear,
                    PostFinetune,
                ),
                Series::new(
                    "baseline-decoder_only",
                    Arm::Baseline,
                    DecoderOnly,
                    None,
                    PostFinetune,
                ),
                Series::new(
                    "pa-linear-decoder_only",
                    Arm::Pa,
                    DecoderOnly,
                    linear,
                    PostFinetune,
                ),
            ],
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Figure {
    type Err = PlotError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Figure::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| PlotError::UnknownFigure(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    PrePrune,
    PostPrune,
    PostFinetune,
}

impl Quantity {
    fn of(&self, r: &ResultRecord) -> f64 {
        match self {
            Quantity::PrePrune => r.fitness_pre_prune,
            Quantity::PostPrune => r.fitness_post_prune,
            Quantity::PostFinetune => r.fitness_post_finetune,
        }
    }
}

/// Which records feed a column and which fitness field it plots.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: &'static str,
    pub arm: Arm,
    pub scope: Scope,
    pub g_kind: Option<PerturbationKind>,
    pub quantity: Quantity,
}

impl Series {
    fn new(
        name: &'static str,
        arm: Arm,
        scope: Scope,
        g_kind: Option<PerturbationKind>,
        quantity: Quantity,
    ) -> Self {
        Series {
            name,
            arm,
            scope,
            g_kind,
            quantity,
        }
    }

    fn matches(&self, r: &ResultRecord, rate: f64) -> bool {
        r.arm == self.arm && r.scope == self.scope && r.g_kind == self.g_kind && r.rate == rate
    }
}

/// A series with no record at some rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingCell {
    pub series: &'static str,
    pub arm: Arm,
    pub scope: Scope,
    pub g_kind: Option<PerturbationKind>,
    /// `None` when the table has no rates at all.
    pub rate: Option<f64>,
}

impl fmt::Display for MissingCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = self.g_kind.map_or("none", |k| k.as_str());
        write!(
            f,
            "{} (arm={} scope={} g_kind={} rate=",
            self.series, self.arm, self.scope, g
        )?;
        match self.rate {
            Some(r) => write!(f, "{r})"),
            None => f.write_str("any)"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("unknown figure {0:?}, expected fig1 to fig6")]
    UnknownFigure(String),
    #[error("missing cells: {}", list(.0))]
    Missing(Vec<MissingCell>),
}

fn list(cells: &[MissingCell]) -> String {
    cells
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotTable {
    pub figure: Figure,
    pub columns: Vec<&'static str>,
    pub rows: Vec<(f64, Vec<f64>)>,
}

impl PlotTable {
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["rate"];
        header.extend(&self.columns);
        w.write_record(&header)?;
        for (rate, values) in &self.rows {
            let mut row = vec![rate.to_string()];
            row.extend(values.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Median of a non-empty slice; the mean of the middle pair for even sizes.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// The rates present in `records`, ascending.
pub fn rates_in(records: &[ResultRecord]) -> Vec<f64> {
    let mut rates: Vec<f64> = records.iter().map(|r| r.rate).collect();
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    rates
}

/// Medians over seeds for every series of `figure` at every rate in
/// `rates`. Fails with the full list of absent (series, rate) cells.
pub fn emit_plot_data(
    records: &[ResultRecord],
    figure: Figure,
    rates: &[f64],
) -> Result<PlotTable, PlotError> {
    let series = figure.series();
    let mut missing = Vec::new();
    if rates.is_empty() {
        missing.extend(series.iter().map(|s| MissingCell {
            series: s.name,
            arm: s.arm,
            scope: s.scope,
            g_kind: s.g_kind,
            rate: None,
        }));
    }
    let mut rows = Vec::with_capacity(rates.len());
    for &rate in rates {
        let mut row = Vec::with_capacity(series.len());
        for s in &series {
            let mut values: Vec<f64> = records
                .iter()
                .filter(|r| s.matches(r, rate))
                .map(|r| s.quantity.of(r))
                .collect();
            if values.is_empty() {
                missing.push(MissingCell {
                    series: s.name,
                    arm: s.arm,
                    scope: s.scope,
                    g_kind: s.g_kind,
                    rate: Some(rate),
                });
                row.push(f64::NAN);
            } else {
                row.push(median(&mut values));
            }
        }
        rows.push((rate, row));
    }
    if !missing.is_empty() {
        return Err(PlotError::Missing(missing));
    }
    Ok(PlotTable {
        figure,
        columns: series.iter().map(|s| s.name).collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_counts() {
        assert_eq!(Figure::Fig1.series().len(), 3);
        assert_eq!(Figure::Fig2.series().len(), 2);
        assert_eq!(Figure::Fig3.series().len(), 2);
        assert_eq!(Figure::Fig4.series().len(), 4);
        assert_eq!(Figure::Fig5.series().len(), 2);
        assert_eq!(Figure::Fig6.series().len(), 4);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&mut [7.0]), 7.0);
    }

    #[test]
    fn empty_table_names_every_series() {
        match emit_plot_data(&[], Figure::Fig4, &[]) {
            Err(PlotError::Missing(cells)) => {
                let names: Vec<_> = cells.iter().map(|c| c.series).collect();
                assert_eq!(names, ["baseline", "pa-linear", "pa-square", "pa-cube"]);
            }
            other => panic!("{other:?}"),
        }
        let err = emit_plot_data(&[], Figure::Fig2, &[0.5]).unwrap_err();
        let text = err.to_string();
        assert!(
            text.contains("baseline") && text.contains("pa-linear") && text.contains("rate=0.5"),
            "{text}"
        );
    }

    #[test]
    fn figure_names_parse() {
        for f in Figure::ALL {
            assert_eq!(f.as_str().parse::<Figure>().unwrap(), f);
        }
        assert!("fig7".parse::<Figure>().is_err());
    }
}

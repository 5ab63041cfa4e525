use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::curve::{AblationCurve, CurvePoint};
use crate::embed::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::fusion::{
    FusionConfig, KnowledgeSource, PreparedData, QaInstance, Split, ToyFusionModel, TrainConfig, TrainLog, Vocab,
};

/// Everything that stays fixed across the runs of one experiment.
#[derive(Clone, Copy)]
pub struct Experiment<'a> {
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    /// Parameter initialisation seed.
    pub model_seed: u64,
    /// Source of fixed lexical embedding rows; `None` keeps every row random.
    pub lexical: Option<&'a dyn EmbeddingProvider>,
}

impl Experiment<'_> {
    /// Trains one fresh model; `kg = None` leaves the knowledge block empty.
    pub fn run(
        &self,
        instances: &[QaInstance],
        vocab: &Vocab,
        kg: Option<&KnowledgeSource>,
    ) -> Result<(ToyFusionModel, TrainLog)> {
        let data = PreparedData::prepare(instances, vocab, kg)?;
        self.run_prepared(&data, vocab)
    }

    pub fn run_prepared(&self, data: &PreparedData, vocab: &Vocab) -> Result<(ToyFusionModel, TrainLog)> {
        let mut model = ToyFusionModel::new(&self.fusion, vocab.clone(), self.model_seed)?;
        if let Some(p) = self.lexical {
            model = model.with_lexical_embeddings(p)?;
        }
        let log = crate::fusion::train(&mut model, data, &self.train)?;
        Ok((model, log))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub variant: String,
    pub val_acc: f64,
    /// Accuracy of guessing uniformly among the options.
    pub chance: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// No-KG and with-KG accuracy under otherwise identical training.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastReport {
    pub no_kg: ContrastRow,
    pub with_kg: ContrastRow,
}

impl ContrastReport {
    /// With-KG minus no-KG accuracy.
    pub fn gap(&self) -> f64 {
        self.with_kg.val_acc - self.no_kg.val_acc
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.serialize(&self.no_kg)?;
        w.serialize(&self.with_kg)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let rows =
            csv::Reader::from_reader(input).deserialize().collect::<std::result::Result<Vec<ContrastRow>, _>>()?;
        match <[ContrastRow; 2]>::try_from(rows) {
            Ok([no_kg, with_kg]) => Ok(Self { no_kg, with_kg }),
            Err(rows) => Err(Error::bad_format("contrast report", format!("expected 2 rows, found {}", rows.len()))),
        }
    }
}

/// Mean of `1 / options` over the validation instances.
pub fn option_chance(instances: &[QaInstance]) -> f64 {
    let val: Vec<_> = instances.iter().filter(|i| i.split == Split::Val && !i.options.is_empty()).collect();
    if val.is_empty() {
        return 0.0;
    }
    val.iter().map(|i| 1.0 / i.options.len() as f64).sum::<f64>() / val.len() as f64
}

fn row(variant: &str, log: &TrainLog, chance: f64) -> ContrastRow {
    ContrastRow {
        variant: variant.into(),
        val_acc: log.best_val_acc,
        chance,
        best_epoch: log.best_epoch,
        epochs_run: log.epochs.len(),
    }
}

/// Trains the same model twice, once with an empty knowledge block and once
/// with retrieved sub-graphs, and reports best validation accuracy of each.
pub fn knowledge_contrast(
    instances: &[QaInstance],
    vocab: &Vocab,
    kg: &KnowledgeSource,
    exp: &Experiment,
) -> Result<ContrastReport> {
    let with = PreparedData::prepare(instances, vocab, Some(kg))?;
    let without = with.without_kg();
    let chance = option_chance(instances);
    let (_, log_no) = exp.run_prepared(&without, vocab)?;
    let (_, log_kg) = exp.run_prepared(&with, vocab)?;
    Ok(ContrastReport { no_kg: row("no_kg", &log_no, chance), with_kg: row("with_kg", &log_kg, chance) })
}

/// Best validation accuracy per sub-graph node cap, every run sharing the
/// same seeds.
pub fn node_cap_ablation(
    caps: &[usize],
    instances: &[QaInstance],
    vocab: &Vocab,
    kg: &KnowledgeSource,
    exp: &Experiment,
) -> Result<AblationCurve> {
    super::curve::check_increasing(caps.iter().copied())?;
    let mut points = Vec::with_capacity(caps.len());
    for &cap in caps {
        let (_, log) = exp.run(instances, vocab, Some(&kg.with_node_cap(cap)))?;
        points.push(CurvePoint { x: cap, value: log.best_val_acc });
    }
    AblationCurve::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &str, acc: f64) -> ContrastRow {
        ContrastRow { variant: v.into(), val_acc: acc, chance: 0.25, best_epoch: 3, epochs_run: 6 }
    }

    #[test]
    fn report_csv_round_trip() {
        let r = ContrastReport { no_kg: row("no_kg", 0.27), with_kg: row("with_kg", 0.441) };
        assert!((r.gap() - 0.171).abs() < 1e-12);
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out.clone()).unwrap();
        assert!(text.starts_with("variant,val_acc,chance,best_epoch,epochs_run\nno_kg,"));
        assert_eq!(ContrastReport::read_csv(out.as_slice()).unwrap(), r);
        assert!(ContrastReport::read_csv(&out[..out.len() / 2]).is_err());
    }
}

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use kgvlm::embed::{
    build_index, build_node_table, query_text, EmbeddingFile, EmbeddingIndex, EmbeddingProvider, FileProvider,
    HashEmbedder, NodeEmbeddingTable,
};
use kgvlm::eval::{knowledge_contrast, node_cap_ablation, proximity, similarity_curve, Experiment};
use kgvlm::extract::{
    bench_extractors, extract_baseline, extract_topk, planted_queries, write_bench_csv, BenchConfig, BenchQuery,
    ExtractionMethod, Subgraph,
};
use kgvlm::fusion::{
    dataset_vocab, make_planted_dataset, parse_kv, read_jsonl, train_with, write_jsonl, FusionConfig, KnowledgeSource,
    PlantedDatasetConfig, PreparedData, QaInstance, ToyFusionModel, TrainConfig,
};
use kgvlm::kg::{load_graph, read_snapshot, write_snapshot, KnowledgeGraph, PlantedFact, SynthConfig};
use kgvlm::{Error, Result};

#[derive(Parser)]
#[command(name = "kgvlm", version, about = "Knowledge sub-graph extraction, encoding and fusion at desk scale")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded synthetic graph snapshot, optionally with planted facts.
    GenGraph {
        #[arg(long)]
        out: PathBuf,
        /// JSON list of the planted facts.
        #[arg(long)]
        planted_out: Option<PathBuf>,
        #[arg(long, default_value_t = 11)]
        seed: u64,
        #[arg(long, default_value_t = 12_000)]
        concepts: usize,
        #[arg(long, default_value_t = 34)]
        relations: usize,
        #[arg(long, default_value_t = 24_000)]
        triples: usize,
        #[arg(long, default_value_t = 20)]
        planted_answers: usize,
        #[arg(long, default_value_t = 250)]
        planted_per_answer: usize,
        #[arg(long, default_value_t = 250)]
        cues_per_answer: usize,
        #[arg(long, default_value_t = 1.0)]
        zipf: f64,
    },
    /// Convert a `relation<TAB>subject<TAB>object` file into a snapshot.
    Import {
        #[arg(long)]
        tsv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = kgvlm::kg::DEFAULT_RELATION_CAPACITY)]
        relation_capacity: usize,
    },
    /// Embed every triple with the hash provider and write an embedding file.
    Embed {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 11)]
        seed: u64,
    },
    /// Extract the sub-graph for one question and print it as JSON.
    Extract {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long)]
        caption: Option<String>,
        #[arg(long, default_value_t = 200)]
        k: usize,
        #[arg(long, default_value_t = 200)]
        node_cap: usize,
        #[arg(long, default_value = "proposed")]
        method: ExtractionMethod,
        /// Seed of the hash provider used to embed the question.
        #[arg(long, default_value_t = 11)]
        hash_seed: u64,
    },
    /// Build the planted multiple-choice dataset as JSON lines.
    MakeDataset {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        planted: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        n_train: usize,
        #[arg(long, default_value_t = 500)]
        n_val: usize,
        #[arg(long, default_value_t = 4)]
        options: usize,
        #[arg(long, default_value_t = 2)]
        cues: usize,
        #[arg(long, default_value_t = 2)]
        patches: usize,
        #[arg(long, default_value_t = 8)]
        img_dim: usize,
    },
    /// Train the fusion model and write a checkpoint and a per-epoch log.
    Train {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// `key = value` file; see the README for the keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint_out: PathBuf,
        /// Defaults to the checkpoint path with a `.log.csv` suffix.
        #[arg(long)]
        log_out: Option<PathBuf>,
    },
    /// Greedy predictions of a trained checkpoint on the validation split.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Proximity, similarity curve, node-cap ablation or knowledge contrast.
    Eval {
        #[arg(long, value_enum)]
        mode: EvalMode,
        /// Dataset JSON lines.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "proposed")]
        method: ExtractionMethod,
        /// Comma-separated k values for `curve`.
        #[arg(long, value_delimiter = ',', default_values_t = [1, 5, 10, 20, 50, 100, 200])]
        ks: Vec<usize>,
        /// Comma-separated node caps for `ablation`.
        #[arg(long, value_delimiter = ',', default_values_t = [10, 50, 200])]
        caps: Vec<usize>,
    },
    /// Time both extractors on planted questions and write the comparison CSV.
    Bench {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        planted: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        queries: usize,
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        #[arg(long, default_value_t = 200)]
        k: usize,
        #[arg(long, default_value_t = 200)]
        node_cap: usize,
        #[arg(long, default_value_t = 11)]
        hash_seed: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Proximity,
    Curve,
    Ablation,
    Contrast,
}

/// Pipeline settings read from a `key = value` file. Keys not listed here
/// are passed to the training configuration.
struct RunConfig {
    train: TrainConfig,
    k: usize,
    node_cap: usize,
    use_kg: bool,
    model_seed: u64,
    hash_seed: u64,
    layers: usize,
    max_positions: usize,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut c = Self {
            train: TrainConfig::toy(),
            k: 8,
            node_cap: 16,
            use_kg: true,
            model_seed: 1,
            hash_seed: 11,
            layers: 2,
            max_positions: 64,
        };
        let Some(path) = path else { return Ok(c) };
        let text = std::fs::read_to_string(path)?;
        for (k, v) in parse_kv(&text)? {
            let bad = || Error::InvalidConfig(format!("{k}: cannot parse {v:?}"));
            match k.as_str() {
                "k" => c.k = v.parse().map_err(|_| bad())?,
                "node_cap" => c.node_cap = v.parse().map_err(|_| bad())?,
                "use_kg" => c.use_kg = v.parse().map_err(|_| bad())?,
                "model_seed" => c.model_seed = v.parse().map_err(|_| bad())?,
                "hash_seed" => c.hash_seed = v.parse().map_err(|_| bad())?,
                "layers" => c.layers = v.parse().map_err(|_| bad())?,
                "max_positions" => c.max_positions = v.parse().map_err(|_| bad())?,
                _ => {
                    if !c.train.set(&k, &v)? {
                        return Err(Error::InvalidConfig(format!("unknown config key {k:?}")));
                    }
                }
            }
        }
        c.train.validate()?;
        Ok(c)
    }

    fn fusion(&self, dim: usize, img_dim: usize) -> FusionConfig {
        FusionConfig { layers: self.layers, max_positions: self.max_positions, ..FusionConfig::new(dim, img_dim) }
    }
}

/// Graph plus retrieval structures rebuilt from an embedding file.
struct Retrieval {
    graph: KnowledgeGraph,
    index: EmbeddingIndex,
    table: NodeEmbeddingTable,
    query: HashEmbedder,
}

impl Retrieval {
    fn load(graph: &Path, embeddings: &Path, hash_seed: u64) -> Result<Self> {
        let graph = read_graph(graph)?;
        let file = EmbeddingFile::read(BufReader::new(File::open(embeddings)?))?;
        let dim = file.dim;
        let index = build_index(&graph, &FileProvider::new(file))?;
        let table = build_node_table(&graph, &index)?;
        Ok(Self { graph, index, table, query: HashEmbedder::new(dim, hash_seed)? })
    }

    fn source(&self, k: usize, node_cap: usize) -> KnowledgeSource<'_> {
        KnowledgeSource {
            graph: &self.graph,
            index: &self.index,
            table: &self.table,
            provider: &self.query,
            k,
            node_cap,
        }
    }

    fn extract(
        &self,
        id: &str,
        question: &str,
        caption: Option<&str>,
        method: ExtractionMethod,
        k: usize,
        cap: usize,
    ) -> Result<Subgraph> {
        let q = self.query.embed_text(&query_text(question, caption))?;
        Ok(match method {
            ExtractionMethod::Proposed => extract_topk(id, &q, &self.index, &self.graph, &self.table, k, cap)?.0,
            ExtractionMethod::Baseline => extract_baseline(id, question, &q, &self.graph, &self.table, cap)?.0,
        })
    }
}

fn read_graph(path: &Path) -> Result<KnowledgeGraph> {
    read_snapshot(BufReader::new(File::open(path)?))
}

fn read_dataset(path: &Path) -> Result<Vec<QaInstance>> {
    read_jsonl(BufReader::new(File::open(path)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn img_dim(instances: &[QaInstance]) -> Result<usize> {
    instances.first().map(|i| i.image_patches.ncols()).ok_or_else(|| Error::InvalidConfig("dataset is empty".into()))
}

fn answer_text(inst: &QaInstance) -> String {
    inst.answer().join(" ")
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenGraph {
            out,
            planted_out,
            seed,
            concepts,
            relations,
            triples,
            planted_answers,
            planted_per_answer,
            cues_per_answer,
            zipf,
        } => {
            let sg = SynthConfig::new(seed, concepts, relations, triples)
                .with_planted(planted_answers, planted_per_answer, cues_per_answer)
                .with_zipf_exponent(zipf)
                .generate()?;
            write_snapshot(&sg.graph, create(&out)?)?;
            if let Some(p) = planted_out {
                let mut w = create(&p)?;
                serde_json::to_writer(&mut w, &sg.planted)?;
                w.flush()?;
            }
            eprintln!(
                "{} concepts, {} triples, {} planted answers",
                sg.graph.num_concepts(),
                sg.graph.num_triples(),
                sg.planted.len()
            );
        }
        Cmd::Import { tsv, out, relation_capacity } => {
            let g = load_graph(BufReader::new(File::open(tsv)?), relation_capacity)?;
            write_snapshot(&g, create(&out)?)?;
            eprintln!("{} concepts, {} triples, {} relations", g.num_concepts(), g.num_triples(), g.relations().len());
        }
        Cmd::Embed { graph, out, dim, seed } => {
            let g = read_graph(&graph)?;
            let idx = build_index(&g, &HashEmbedder::new(dim, seed)?)?;
            idx.to_embedding_file(&g)?.write(create(&out)?)?;
        }
        Cmd::Extract { graph, embeddings, question, caption, k, node_cap, method, hash_seed } => {
            let r = Retrieval::load(&graph, &embeddings, hash_seed)?;
            let sg = r.extract("q0", &question, caption.as_deref(), method, k, node_cap)?;
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, &sg.to_record(&r.graph))?;
            writeln!(lock)?;
        }
        Cmd::MakeDataset { graph, planted, out, seed, n_train, n_val, options, cues, patches, img_dim } => {
            let g = read_graph(&graph)?;
            let facts: Vec<PlantedFact> = serde_json::from_reader(BufReader::new(File::open(planted)?))?;
            let cfg = PlantedDatasetConfig { cues_per_question: cues, options, patches, img_dim };
            let d = make_planted_dataset(seed, &g, &facts, n_train, n_val, &cfg)?;
            write_jsonl(&d, create(&out)?)?;
        }
        Cmd::Train { graph, embeddings, dataset, config, checkpoint_out, log_out } => {
            let rc = RunConfig::load(config.as_deref())?;
            let r = Retrieval::load(&graph, &embeddings, rc.hash_seed)?;
            let instances = read_dataset(&dataset)?;
            let vocab = dataset_vocab(&instances);
            let ks = r.source(rc.k, rc.node_cap);
            let data = PreparedData::prepare(&instances, &vocab, rc.use_kg.then_some(&ks))?;
            let fusion = rc.fusion(r.index.dim(), img_dim(&instances)?);
            let mut model = ToyFusionModel::new(&fusion, vocab, rc.model_seed)?.with_lexical_embeddings(&r.query)?;
            let log = train_with(&mut model, &data, &rc.train, |e| {
                eprintln!("epoch {:>2}  loss {:.4}  val_acc {:.4}  lr {:.3e}", e.epoch, e.train_loss, e.val_acc, e.lr)
            })?;
            eprintln!("best val_acc {:.4} at epoch {}", log.best_val_acc, log.best_epoch);
            model.write(create(&checkpoint_out)?)?;
            let log_path = log_out.unwrap_or_else(|| checkpoint_out.with_extension("log.csv"));
            log.write_csv(create(&log_path)?)?;
        }
        Cmd::Predict { checkpoint, graph, embeddings, dataset, config, out } => {
            let rc = RunConfig::load(config.as_deref())?;
            let model = ToyFusionModel::read(BufReader::new(File::open(checkpoint)?))?;
            let r = Retrieval::load(&graph, &embeddings, rc.hash_seed)?;
            let instances = read_dataset(&dataset)?;
            let ks = r.source(rc.k, rc.node_cap);
            let data = PreparedData::prepare(&instances, &model.vocab, rc.use_kg.then_some(&ks))?;
            let mut w = create(&out)?;
            let mut hits = 0;
            for s in &data.val {
                let input = kgvlm::fusion::FusionInput { kg: s.kg.as_ref(), patches: &s.patches, prompt: &s.prompt };
                let g = model.generate(&input, rc.train.max_gen_len)?;
                let correct = !g.missing_sep && g.answer == s.answer;
                hits += correct as usize;
                let row = serde_json::json!({
                    "id": s.id,
                    "rationale": model.vocab.decode(&g.rationale)?.join(" "),
                    "answer": model.vocab.decode(&g.answer)?.join(" "),
                    "missing_sep": g.missing_sep,
                    "truncated": g.truncated,
                    "correct": correct,
                });
                serde_json::to_writer(&mut w, &row)?;
                writeln!(w)?;
            }
            w.flush()?;
            eprintln!(
                "accuracy {:.4} over {} validation questions",
                hits as f64 / data.val.len().max(1) as f64,
                data.val.len()
            );
        }
        Cmd::Eval { mode, input, out, graph, embeddings, config, method, ks, caps } => {
            let rc = RunConfig::load(config.as_deref())?;
            let r = Retrieval::load(&graph, &embeddings, rc.hash_seed)?;
            let instances = read_dataset(&input)?;
            match mode {
                EvalMode::Proximity => {
                    let mut records = Vec::with_capacity(instances.len());
                    for inst in &instances {
                        let sg =
                            r.extract(&inst.id, &inst.question, inst.context.as_deref(), method, rc.k, rc.node_cap)?;
                        records.push(sg.to_record(&r.graph));
                    }
                    let answers: Vec<String> = instances.iter().map(answer_text).collect();
                    let report = proximity(&records, &answers, &r.query)?;
                    eprintln!(
                        "proximity {:.4} ± {:.4} over {} samples",
                        report.mean,
                        report.std,
                        report.per_sample.len()
                    );
                    report.write_csv(create(&out)?)?;
                }
                EvalMode::Curve => {
                    let queries: Vec<BenchQuery> = instances
                        .iter()
                        .map(|i| BenchQuery {
                            id: i.id.clone(),
                            question: i.question.clone(),
                            caption: i.context.clone(),
                            answer: answer_text(i),
                        })
                        .collect();
                    similarity_curve(&queries, &r.graph, &r.index, &r.query, &ks)?.write_csv(create(&out)?)?;
                }
                EvalMode::Ablation | EvalMode::Contrast => {
                    let vocab = dataset_vocab(&instances);
                    let exp = Experiment {
                        fusion: rc.fusion(r.index.dim(), img_dim(&instances)?),
                        train: rc.train,
                        model_seed: rc.model_seed,
                        lexical: Some(&r.query),
                    };
                    let source = r.source(rc.k, rc.node_cap);
                    if let EvalMode::Ablation = mode {
                        node_cap_ablation(&caps, &instances, &vocab, &source, &exp)?.write_csv(create(&out)?)?;
                    } else {
                        let report = knowledge_contrast(&instances, &vocab, &source, &exp)?;
                        eprintln!(
                            "no_kg {:.4}  with_kg {:.4}  gap {:+.4}  chance {:.4}",
                            report.no_kg.val_acc,
                            report.with_kg.val_acc,
                            report.gap(),
                            report.no_kg.chance
                        );
                        report.write_csv(create(&out)?)?;
                    }
                }
            }
        }
        Cmd::Bench { graph, embeddings, planted, out, queries, repeat, k, node_cap, hash_seed, seed } => {
            let r = Retrieval::load(&graph, &embeddings, hash_seed)?;
            let facts: Vec<PlantedFact> = serde_json::from_reader(BufReader::new(File::open(planted)?))?;
            let workload = planted_queries(&r.graph, &facts, queries, seed);
            let rows = bench_extractors(
                &workload,
                BenchConfig { k, node_cap, repeat },
                &r.graph,
                &r.index,
                &r.table,
                &r.query,
            )?;
            for row in &rows {
                eprintln!("{:?}: mean {:.3} ms, similarity {:.4}", row.method, row.mean_ms, row.similarity_mean);
            }
            write_bench_csv(&rows, create(&out)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

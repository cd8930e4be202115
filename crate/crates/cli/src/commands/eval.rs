//! `eval` subcommand: score predicted spans against gold annotations.

use super::{read_json, write_json};
use anyhow::{Context, Result};
use clap::ValueEnum;
use deid_core::eval::{
    evaluate, parse_i2b2_xml, parse_jsonl, AllOrNothingGranularity, DocumentLabels, MatchCriteria,
    TypeMap,
};
use std::io::BufReader;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnnotationFormat {
    /// JSON lines, one document per line.
    Jsonl,
    /// Directory of i2b2-style XML files.
    I2b2Dir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Granularity {
    PerDocument,
    PerDocumentAndType,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Gold annotations.
    #[arg(long)]
    pub gold: PathBuf,
    /// Predicted annotations.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub gold_format: AnnotationFormat,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub pred_format: AnnotationFormat,
    /// Type-mapping file (JSON: {"map": {"SOURCE_TYPE": "CANONICAL"}}).
    #[arg(long)]
    pub type_map: Option<PathBuf>,
    #[arg(long, default_value_t = 0.6)]
    pub similarity_threshold: f64,
    /// Drop the entity-type equality requirement.
    #[arg(long)]
    pub no_require_type: bool,
    /// Drop the positional-overlap requirement.
    #[arg(long)]
    pub no_require_position: bool,
    /// Which all-or-nothing recall to highlight in the console table.
    #[arg(long, value_enum, default_value = "per-document")]
    pub all_or_nothing_granularity: Granularity,
    /// Report output path (JSON).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn load_annotations(path: &Path, format: AnnotationFormat) -> Result<Vec<DocumentLabels>> {
    match format {
        AnnotationFormat::Jsonl => {
            let file = std::fs::File::open(path)
                .with_context(|| format!("opening {}", path.display()))?;
            Ok(parse_jsonl(BufReader::new(file))?)
        }
        AnnotationFormat::I2b2Dir => {
            let mut docs = Vec::new();
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)
                .with_context(|| format!("listing {}", path.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "xml"))
                .collect();
            files.sort();
            for file in files {
                let xml = std::fs::read_to_string(&file)
                    .with_context(|| format!("reading {}", file.display()))?;
                docs.push(parse_i2b2_xml(&super::file_stem(&file), &xml)?);
            }
            Ok(docs)
        }
    }
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let gold = load_annotations(&args.gold, args.gold_format)?;
    let pred = load_annotations(&args.pred, args.pred_format)?;
    let type_map: TypeMap = match &args.type_map {
        Some(path) => read_json(path)?,
        None => TypeMap::default(),
    };
    let criteria = MatchCriteria {
        require_type: !args.no_require_type,
        require_position: !args.no_require_position,
        similarity_threshold: args.similarity_threshold,
    };

    let report = evaluate(&gold, &pred, &criteria, &type_map)?;

    let granularity = match args.all_or_nothing_granularity {
        Granularity::PerDocument => AllOrNothingGranularity::PerDocument,
        Granularity::PerDocumentAndType => AllOrNothingGranularity::PerDocumentAndType,
    };
    let aon = match granularity {
        AllOrNothingGranularity::PerDocument => report.all_or_nothing_per_document,
        AllOrNothingGranularity::PerDocumentAndType => {
            report.all_or_nothing_per_document_and_type
        }
    };

    println!(
        "documents: {}  gold spans: {}  predicted: {}  matched: {}",
        report.documents, report.gold_spans, report.predicted_spans, report.matched_spans
    );
    println!("{:<24} {:>10} {:>10} {:>10}", "type", "precision", "recall", "f1");
    println!(
        "{:<24} {:>10.4} {:>10.4} {:>10.4}",
        "micro", report.micro.precision, report.micro.recall, report.micro.f1
    );
    for (entity_type, prf) in &report.per_type {
        println!(
            "{:<24} {:>10.4} {:>10.4} {:>10.4}",
            entity_type, prf.precision, prf.recall, prf.f1
        );
    }
    println!(
        "all-or-nothing recall ({}): {:.4}",
        match granularity {
            AllOrNothingGranularity::PerDocument => "per document",
            AllOrNothingGranularity::PerDocumentAndType => "per document and type",
        },
        aon
    );

    if let Some(output) = &args.output {
        write_json(output, &report)?;
    }
    Ok(())
}

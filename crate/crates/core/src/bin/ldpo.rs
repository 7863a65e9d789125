use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use ldpo::data::{
    grids_from_matrix, load_feature_matrix, read_assignments, read_stoplist, read_text_corpus, save_feature_matrix,
    write_assignments, write_atomic, MatrixFormat,
};
use ldpo::encode::encode_grids;
use ldpo::hierarchy::ApConfig;
use ldpo::labeling::{extract_keywords, CommonTermRule, KeywordOptions};
use ldpo::metrics::{nmi, purity};
use ldpo::pipeline::{
    cluster_features, run_loop, write_outcome, write_tree, ClusteringMode, EncodingConfig, EncodingKind, LoopArtifacts,
    LoopConfig, TREE_FILE,
};
use ldpo::stats::Standardizer;
use ldpo::{LdpoError, Result};

#[derive(Parser)]
#[command(name = "ldpo", version, about = "Looped pseudo-task optimization: cluster, retrain, re-embed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full loop and write reports, assignments, the learner and the tree.
    Loop {
        #[command(flatten)]
        common: Common,
        /// Feature file, overriding input.features.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster a feature file once.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        /// Assignment csv to write.
        #[arg(long)]
        out: PathBuf,
        /// k-means cluster count (initial count with --rim).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        /// Refine with RIM at this lambda.
        #[arg(long)]
        rim: Option<f64>,
        /// z-score columns first.
        #[arg(long)]
        standardize: bool,
    },
    /// Encode descriptor grids (rows of a feature file) as Fisher vectors or VLAD.
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Length of one local descriptor.
        #[arg(long)]
        grid_dim: Option<usize>,
        /// fv or vlad.
        #[arg(long)]
        method: Option<String>,
        /// GMM components or VLAD codewords.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        pca_dim: Option<usize>,
    },
    /// Compare two assignment files.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Build the category tree from a loop output directory.
    Tree {
        #[command(flatten)]
        common: Common,
        /// Loop output directory.
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to tree.json inside the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank per-cluster keywords from an `id,text` document csv.
    Keywords {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        /// Assignment csv naming the cluster of every document.
        #[arg(long)]
        assignments: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        stoplist: Option<PathBuf>,
    },
}

/// Optional sections read by the single-step subcommands. Unknown keys are
/// ignored so a loop configuration can be reused.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct ToolConfig {
    seed: Option<u64>,
    clustering: Option<ClusteringMode>,
    encoding: Option<EncodingConfig>,
    grid_dim: Option<usize>,
    ap: Option<ApConfig>,
    keywords: KeywordSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct KeywordSection {
    top_n: Option<usize>,
    stoplist: Option<PathBuf>,
    common_terms: Option<CommonTermRule>,
}

fn tool_config(path: Option<&Path>) -> Result<ToolConfig> {
    let Some(path) = path else {
        return Ok(ToolConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| LdpoError::Io {
        path: path.to_owned(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| LdpoError::Config(format!("{}: {e}", path.display())))
}

fn resolved_seed(common: &Common, config: Option<u64>) -> u64 {
    common.seed.or(config).unwrap_or(0)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Loop { common, input, out } => {
            let path = common
                .config
                .as_deref()
                .ok_or_else(|| LdpoError::Config("loop needs --config".into()))?;
            let mut config = LoopConfig::from_toml_file(path)?;
            if let Some(p) = input {
                config.input.features = Some(p);
            }
            if let Some(s) = common.seed {
                config.seed = s;
            }
            let outcome = run_loop(&config)?;
            for r in &outcome.reports {
                println!(
                    "iteration {} k={} purity={} nmi={} test_top1={}",
                    r.iteration,
                    r.k,
                    fmt_opt(r.purity),
                    fmt_opt(r.nmi),
                    fmt_opt(r.test_top1)
                );
            }
            write_outcome(&outcome, &out)?;
            let tree = LoopArtifacts {
                base: outcome.base.clone(),
                learner: outcome.learner.clone(),
                assignment: outcome.assignment().clone(),
                split: outcome.split.clone(),
            }
            .tree(&ApConfig::default())?;
            write_tree(&tree, &out.join(TREE_FILE))?;
            println!(
                "{} after {} iterations; wrote {}",
                if outcome.converged { "converged" } else { "stopped" },
                outcome.reports.len(),
                out.display()
            );
            Ok(())
        }
        Command::Cluster {
            common,
            input,
            out,
            k,
            restarts,
            rim,
            standardize,
        } => {
            let cfg = tool_config(common.config.as_deref())?;
            let mode = match (k, rim, cfg.clustering) {
                (Some(k), Some(lambda), _) => ClusteringMode::KmeansRim { k_init: k, lambda },
                (Some(k), None, _) => ClusteringMode::Kmeans {
                    k,
                    restarts: restarts.unwrap_or(1),
                },
                (None, _, Some(mode)) => mode,
                (None, _, None) => return Err(LdpoError::Config("give --k or a [clustering] table".into())),
            };
            let seed = resolved_seed(&common, cfg.seed);
            let m = load_feature_matrix(&input, MatrixFormat::from_path(&input))?;
            let x = if standardize {
                Standardizer::fit(m.view())?.apply(m.view())?
            } else {
                m.values().clone()
            };
            let a = cluster_features(x.view(), &mode, seed)?;
            write_assignments(&out, m.ids(), &a)?;
            println!("k={} sizes={:?}", a.k(), a.sizes());
            Ok(())
        }
        Command::Encode {
            common,
            input,
            out,
            grid_dim,
            method,
            size,
            pca_dim,
        } => {
            let cfg = tool_config(common.config.as_deref())?;
            let mut enc = cfg.encoding.unwrap_or_default();
            if let Some(m) = method {
                enc.mode = match m.as_str() {
                    "fv" => EncodingKind::Fv,
                    "vlad" => EncodingKind::Vlad,
                    other => return Err(LdpoError::Config(format!("unknown method '{other}', expected fv or vlad"))),
                };
            }
            if let Some(s) = size {
                enc.components = s;
                enc.codewords = s;
            }
            if pca_dim.is_some() {
                enc.pca_dim = pca_dim;
            }
            let method = enc
                .method()
                .ok_or_else(|| LdpoError::Config("choose --method fv or vlad".into()))?;
            let dim = grid_dim
                .or(cfg.grid_dim)
                .ok_or_else(|| LdpoError::Config("give --grid-dim".into()))?;
            let m = load_feature_matrix(&input, MatrixFormat::from_path(&input))?;
            let grids = grids_from_matrix(&m, dim)?;
            let (encoded, _, _) = encode_grids(&grids, method, enc.pca_dim, resolved_seed(&common, cfg.seed))?;
            save_feature_matrix(&encoded, &out, MatrixFormat::from_path(&out))?;
            println!("encoded {} items to dimension {}", encoded.n_items(), encoded.dim());
            Ok(())
        }
        Command::Metrics { a, b } => {
            let la = read_assignments(&a)?;
            let lb = read_assignments(&b)?.align_to(&la.ids)?;
            println!("purity={:?} nmi={:?}", purity(&la.assignment, &lb)?, nmi(&la.assignment, &lb)?);
            Ok(())
        }
        Command::Tree { common, input, out } => {
            let cfg = tool_config(common.config.as_deref())?;
            let tree = LoopArtifacts::load(&input)?.tree(&cfg.ap.unwrap_or_default())?;
            let path = out.unwrap_or_else(|| input.join(TREE_FILE));
            write_tree(&tree, &path)?;
            println!("tree widths {:?}; wrote {}", tree.widths(), path.display());
            Ok(())
        }
        Command::Keywords {
            common,
            input,
            assignments,
            out,
            top_n,
            stoplist,
        } => {
            let cfg = tool_config(common.config.as_deref())?;
            let corpus = read_text_corpus(&input)?;
            let labeled = read_assignments(&assignments)?;
            let mut options = KeywordOptions::default();
            if let Some(n) = top_n.or(cfg.keywords.top_n) {
                options.top_n = n;
            }
            if let Some(p) = stoplist.or(cfg.keywords.stoplist) {
                options.stoplist = read_stoplist(&p)?;
            }
            if let Some(rule) = cfg.keywords.common_terms {
                options.common_terms = rule;
            }
            let kw = extract_keywords(&corpus, &labeled.ids, &labeled.assignment, &options)?;
            write_atomic(&out, kw.to_json().as_bytes())?;
            Ok(())
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

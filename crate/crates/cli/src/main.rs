mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hbst::synthetic::LoopPair;

#[derive(Parser, Debug)]
#[command(name = "hbst", version, about = "Binary descriptor search trees: matching, retrieval and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic image sequence with planted loop closures.
    Gen(GenArgs),
    /// Match every query descriptor against a database file.
    Match(MatchArgs),
    /// Run the query-then-insert protocol over an image sequence.
    Protocol(ProtocolArgs),
    /// Measure bitwise and depth completeness.
    Completeness(CompletenessArgs),
    /// Build or inspect tree files.
    #[command(subcommand)]
    Tree(TreeCommand),
    /// Compare tree and brute-force query cost on random descriptors.
    Bench(BenchArgs),
    /// List the available matching strategies.
    Methods,
}

#[derive(Args, Debug, Clone)]
struct TreeParams {
    /// Maximum Hamming distance of an accepted match.
    #[arg(long, default_value_t = 25)]
    tau: u32,
    /// Maximum leaf size before a split.
    #[arg(long, default_value_t = 10)]
    nmax: usize,
    /// Largest accepted deviation of a split bit's mean from 0.5.
    #[arg(long, default_value_t = 0.1)]
    delta_max: f64,
    /// Optional bound on tree depth.
    #[arg(long)]
    max_depth: Option<u32>,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Descriptor file to write.
    #[arg(long)]
    out: PathBuf,
    /// CSV file for the planted loop pairs.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    num_images: u32,
    #[arg(long, default_value_t = 1000)]
    per_image: u32,
    #[arg(long, default_value_t = 256)]
    dim: u32,
    /// Maximum bit flips applied to each copied descriptor.
    #[arg(long, default_value_t = 10)]
    noise: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Loop pair `query:reference:overlap`; repeatable. Without any, the
    /// second half of the sequence revisits the first half.
    #[arg(long = "loop", value_parser = parse_loop)]
    loops: Vec<LoopPair>,
    /// Generate no loop closures at all.
    #[arg(long, conflicts_with = "loops")]
    no_loops: bool,
}

#[derive(Args, Debug)]
struct MatchArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    query: PathBuf,
    /// Matching strategy (see `hbst methods`).
    #[arg(long, default_value = "hbst")]
    method: String,
    #[command(flatten)]
    tree: TreeParams,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProtocolArgs {
    #[arg(long)]
    input: PathBuf,
    /// Pose file (`image_id tx ty tz qx qy qz qw` per line) for ground truth.
    #[arg(long, requires = "compute_gt")]
    poses: Option<PathBuf>,
    /// Ground-truth CSV (`query_id,reference_id`).
    #[arg(long, conflicts_with = "compute_gt")]
    ground_truth: Option<PathBuf>,
    /// Derive ground truth from descriptor overlap (and poses, if given).
    #[arg(long)]
    compute_gt: bool,
    /// Write the precision/recall curve and report max F1.
    #[arg(long)]
    eval: bool,
    #[arg(long, default_value = "hbst")]
    method: String,
    #[command(flatten)]
    tree: TreeParams,
    #[arg(long, default_value_t = 0.1)]
    tau_image: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct CompletenessArgs {
    /// Reference descriptors.
    #[arg(long)]
    input: PathBuf,
    /// Query descriptors; planted from the references when omitted.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "10,25,50,75")]
    taus: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8")]
    depths: Vec<u32>,
    /// Maximum bit flips of planted queries.
    #[arg(long, default_value_t = 15)]
    noise_max: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    delta_max: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum TreeCommand {
    /// Build a tree from a descriptor file.
    Build(TreeBuildArgs),
    /// Print shape statistics of a tree file.
    Info {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum BuildMode {
    /// All descriptors at once.
    Balanced,
    /// One descriptor at a time, in file order.
    Incremental,
}

#[derive(Args, Debug)]
struct TreeBuildArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = BuildMode::Incremental)]
    mode: BuildMode,
    #[command(flatten)]
    tree: TreeParams,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 100_000)]
    stored: usize,
    #[arg(long, default_value_t = 1000)]
    queries: usize,
    #[arg(long, default_value_t = 256)]
    dim: u32,
    /// Maximum bit flips of each query relative to a stored descriptor.
    #[arg(long, default_value_t = 10)]
    noise: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    tree: TreeParams,
}

fn parse_loop(s: &str) -> Result<LoopPair, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [q, r, f] = parts[..] else {
        return Err(format!("expected query:reference:overlap, got {s:?}"));
    };
    Ok(LoopPair {
        query: q.parse().map_err(|e| format!("bad query id {q:?}: {e}"))?,
        reference: r.parse().map_err(|e| format!("bad reference id {r:?}: {e}"))?,
        overlap: f.parse().map_err(|e| format!("bad overlap {f:?}: {e}"))?,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Match(a) => commands::run_match(a),
        Command::Protocol(a) => commands::protocol(a),
        Command::Completeness(a) => commands::completeness(a),
        Command::Tree(TreeCommand::Build(a)) => commands::tree_build(a),
        Command::Tree(TreeCommand::Info { input }) => commands::tree_info(&input),
        Command::Bench(a) => commands::bench(a),
        Command::Methods => commands::methods(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hbst: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 1 })
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;

use orhleak_core::experiment::DriverPlacement;

#[derive(Parser)]
#[command(
    name = "orhleak",
    version,
    about = "Ride-hailing matching leakage simulator and passive reconstruction attack"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
pub struct GraphArgs {
    /// Unit-weight grid graph, e.g. 10x10
    #[arg(long, value_name = "WxH", conflicts_with = "graph")]
    pub grid: Option<String>,
    /// Edge-list file (`nodes N` header, then `u v w` lines)
    #[arg(long, value_name = "FILE")]
    pub graph: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct EncodingArgs {
    /// Embedding dimension
    #[arg(long)]
    pub eta: Option<usize>,
    /// Bits per block
    #[arg(long)]
    pub l: Option<u32>,
    /// Blocks per coordinate
    #[arg(long)]
    pub m: Option<u32>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub encoding: EncodingArgs,
    /// Responding drivers per query
    #[arg(long)]
    pub drivers: Option<usize>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for transcript files
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Embed the plaintext rider and driver encodings in each transcript
    #[arg(long)]
    pub reveal_truth: bool,
    /// uniform-blocks or graph-nodes
    #[arg(long)]
    pub placement: Option<DriverPlacement>,
    /// key=value config file; flags override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    /// Transcript files, or directories of *.json transcripts
    #[arg(required = true)]
    pub transcripts: Vec<PathBuf>,
    /// Expected parameters; a transcript that disagrees is rejected
    #[command(flatten)]
    pub encoding: EncodingArgs,
    /// Fold all transcripts into one state (caller asserts a single rider)
    #[arg(long)]
    pub same_rider: bool,
    /// Write one report file per transcript here instead of JSON lines on stdout
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CouponArgs {
    /// Inclusive range of block widths, e.g. 1..4
    #[arg(long, value_name = "A..B")]
    pub l_range: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV output file (stdout if omitted)
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// uniform-blocks (coupon collector) or graph-nodes (per-position coverage)
    #[arg(long)]
    pub placement: Option<DriverPlacement>,
    /// Graph for graph-nodes placement
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Embedding dimension for graph-nodes placement
    #[arg(long)]
    pub eta: Option<usize>,
    /// Blocks per coordinate for graph-nodes placement
    #[arg(long)]
    pub m: Option<u32>,
    /// Drivers drawn per trial for graph-nodes placement
    #[arg(long)]
    pub drivers: Option<usize>,
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LemmaArgs {
    /// Largest block width to check exhaustively (at most 8)
    #[arg(long)]
    pub l_max: Option<u32>,
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ride requests and write the provider's transcripts
    Simulate(SimulateArgs),
    /// Reconstruct rider and driver encodings from transcripts
    Attack(AttackArgs),
    /// Drivers needed for block coverage: closed form and Monte Carlo
    Coupon(CouponArgs),
    /// Exhaustively check recovery from full difference sets
    LemmaCheck(LemmaArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(&args),
        Command::Attack(args) => commands::attack(&args),
        Command::Coupon(args) => commands::coupon(&args),
        Command::LemmaCheck(args) => commands::lemma_check(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}

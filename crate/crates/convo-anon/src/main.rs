use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};

use convo_anon::anonymizer::{
    baseline_plan, plan_conversation, write_plan, SearchConfig, UtilityLoss,
};
use convo_anon::diarizer::{diarize, parse_stream, DEFAULT_AFFINITY_KEEP};
use convo_anon::embeddings::{
    parse_embedding_table, protect_pool, write_embedding_table, Pool, SpeakerVector,
};
use convo_anon::metrics::{
    build_pairs, der, eer_threshold, far_at_threshold, format_report, speaker_spans, wer,
    EvalReport,
};
use convo_anon::pipeline::{run_pipeline, write_ground_truth_files, PipelineConfig};
use convo_anon::rttm::{parse_rttm, write_rttm};
use convo_anon::simulator::{simulate, SimulationConfig};
use convo_anon::{Error, Result};

#[derive(Parser)]
#[command(
    name = "convo-anon",
    version,
    about = "Conversation-level speaker anonymization planning and evaluation over embedding timelines"
)]
struct Cli {
    /// Base random seed (overrides config seeds).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for pipeline runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug). CONVO_ANON_LOG
    /// overrides.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic conversations (RTTM + streams + speaker tables).
    Simulate {
        /// Flat `key = value` simulation config.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },

    /// Diarize an embedding stream into an RTTM timeline.
    Diarize {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long, default_value_t = 10)]
        k_max: usize,
        /// Fix the speaker count instead of estimating it.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_AFFINITY_KEEP)]
        affinity_keep: f64,
        #[arg(long)]
        out_rttm: PathBuf,
    },

    /// Select pseudo-speaker vectors for one conversation's speakers.
    Anonymize {
        /// Embedding table of the conversation's aggregated speakers.
        #[arg(long)]
        embeddings: PathBuf,
        /// Embedding table of the external pool.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, value_enum)]
        loss: LossArg,
        #[arg(long, default_value_t = 200)]
        l_far: usize,
        #[arg(long, default_value_t = 10_000)]
        l_prune: usize,
        #[arg(long)]
        out_plan: PathBuf,
        /// Also write the anonymized vectors as an embedding table keyed
        /// by speaker id.
        #[arg(long)]
        out_emb: Option<PathBuf>,
        /// Baseline: farthest candidate count.
        #[arg(long, default_value_t = 200)]
        k_far: usize,
        /// Baseline: vectors averaged per speaker.
        #[arg(long, default_value_t = 10)]
        k_avg: usize,
        /// Replace pool vectors by same-gender neighbor averages first.
        #[arg(long)]
        protect_pool: bool,
        #[arg(long, default_value_t = 10)]
        pool_protect_neighbors: usize,
        /// Include the privacy term in beam scores.
        #[arg(long)]
        include_privacy: bool,
    },

    /// Score an anonymized conversation against its original.
    Evaluate {
        /// Timeline used for aggregation and as the DER reference.
        #[arg(long)]
        ref_rttm: PathBuf,
        /// DER hypothesis timeline.
        #[arg(long)]
        hyp_rttm: PathBuf,
        /// Original conversation stream.
        #[arg(long)]
        orig_emb: PathBuf,
        /// Anonymized conversation stream.
        #[arg(long)]
        anon_emb: PathBuf,
        #[arg(long)]
        ref_text: Option<PathBuf>,
        #[arg(long)]
        hyp_text: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        collar: f64,
        #[arg(long)]
        out_report: PathBuf,
    },

    /// Run simulate -> diarize -> plan -> apply -> evaluate end to end.
    Pipeline {
        /// Flat `key = value` pipeline config.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Read existing conversations instead of simulating.
        #[arg(long)]
        input_dir: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum LossArg {
    Ds,
    As,
    Baseline,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("CONVO_ANON_LOG", default_level),
    )
    .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn read_config(path: &PathBuf) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Simulate { config, out_dir } => {
            let mut cfg = SimulationConfig::parse(&read_config(&config)?)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", config.display())))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let truths = simulate(&cfg)?;
            fs::create_dir_all(&out_dir)?;
            for gt in &truths {
                write_ground_truth_files(gt, &out_dir)?;
            }
            println!(
                "wrote {} conversations ({} speakers each) to {}",
                truths.len(),
                cfg.n_speakers,
                out_dir.display()
            );
            Ok(())
        }

        Command::Diarize {
            stream,
            k_max,
            k,
            affinity_keep,
            out_rttm,
        } => {
            let parsed = parse_stream(&fs::read_to_string(&stream)?)?;
            let doc = diarize(&parsed, affinity_keep, k_max, k, seed.unwrap_or(0))?;
            fs::write(&out_rttm, write_rttm(&doc))?;
            println!(
                "{}: {} segments, {} speakers -> {}",
                doc.file_id(),
                doc.segments().len(),
                doc.speakers().len(),
                out_rttm.display()
            );
            Ok(())
        }

        Command::Anonymize {
            embeddings,
            pool,
            loss,
            l_far,
            l_prune,
            out_plan,
            out_emb,
            k_far,
            k_avg,
            protect_pool: protect,
            pool_protect_neighbors,
            include_privacy,
        } => {
            let originals = parse_embedding_table(&fs::read_to_string(&embeddings)?)?;
            let pool_vectors = parse_embedding_table(&fs::read_to_string(&pool)?)?;
            let mut pool = Pool::new(pool_vectors, pool.display().to_string())?;
            if protect {
                pool = protect_pool(&pool, pool_protect_neighbors)?;
            }
            let plan = match loss {
                LossArg::Baseline => {
                    baseline_plan(&originals, &pool, k_far, k_avg, seed.unwrap_or(0))?
                }
                LossArg::Ds | LossArg::As => plan_conversation(
                    &originals,
                    &pool,
                    &SearchConfig {
                        l_far,
                        l_prune,
                        loss: if matches!(loss, LossArg::Ds) {
                            UtilityLoss::Ds
                        } else {
                            UtilityLoss::As
                        },
                        include_privacy_in_score: include_privacy,
                    },
                )?,
            };
            fs::write(&out_plan, write_plan(&plan))?;
            if let Some(path) = out_emb {
                let anon: Vec<SpeakerVector> = plan
                    .assignments
                    .iter()
                    .map(|a| {
                        SpeakerVector::new(
                            a.speaker_id.as_str(),
                            a.vector.gender(),
                            a.vector.values().to_vec(),
                        )
                    })
                    .collect::<Result<_>>()?;
                fs::write(&path, write_embedding_table(&anon))?;
            }
            println!(
                "{} plan: privacy_term {:.4}, utility_term {:.4} -> {}",
                plan.kind.name(),
                plan.privacy_term,
                plan.utility_term,
                out_plan.display()
            );
            Ok(())
        }

        Command::Evaluate {
            ref_rttm,
            hyp_rttm,
            orig_emb,
            anon_emb,
            ref_text,
            hyp_text,
            collar,
            out_report,
        } => {
            let reference = parse_rttm(&fs::read_to_string(&ref_rttm)?)?;
            let hypothesis = parse_rttm(&fs::read_to_string(&hyp_rttm)?)?;
            let orig_stream = parse_stream(&fs::read_to_string(&orig_emb)?)?;
            let anon_stream = parse_stream(&fs::read_to_string(&anon_emb)?)?;

            let orig_spans = speaker_spans(&reference, &orig_stream)?;
            let anon_spans = speaker_spans(&reference, &anon_stream)?;
            let pairs = build_pairs(
                std::slice::from_ref(&orig_spans),
                std::slice::from_ref(&anon_spans),
            )?;
            let (pos, neg, oa) = pairs.scores()?;
            let (eer, threshold, far) = if neg.is_empty() {
                (None, None, None)
            } else {
                let (eer, threshold) = eer_threshold(&pos, &neg)?;
                (
                    Some(eer),
                    Some(threshold),
                    Some(far_at_threshold(&oa, threshold)?),
                )
            };

            let der_breakdown = der(&reference, &hypothesis, collar)?;
            let wer_breakdown = match (&ref_text, &hyp_text) {
                (Some(r), Some(h)) => {
                    let ref_words: Vec<String> = fs::read_to_string(r)?
                        .split_whitespace()
                        .map(String::from)
                        .collect();
                    let hyp_words: Vec<String> = fs::read_to_string(h)?
                        .split_whitespace()
                        .map(String::from)
                        .collect();
                    Some(wer(&ref_words, &hyp_words)?)
                }
                _ => None,
            };
            let report = EvalReport {
                eer,
                threshold,
                far,
                der: der_breakdown,
                wer: wer_breakdown,
            };
            let text = format_report(&report);
            fs::write(&out_report, &text)?;
            print!("{text}");
            Ok(())
        }

        Command::Pipeline {
            config,
            out_dir,
            input_dir,
        } => {
            let mut cfg = PipelineConfig::parse(&read_config(&config)?)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", config.display())))?;
            if let Some(s) = seed {
                cfg.sim.seed = s;
            }
            if let Some(j) = cli.jobs {
                cfg.jobs = j;
            }
            let outcome = run_pipeline(&cfg, input_dir.as_deref(), &out_dir)?;
            print!("{}", outcome.summary);
            Ok(())
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use lowres_nmt::decoder::{DecodeConfig, FusionConfig, PostNormKind};
use lowres_nmt::eval::CaseMode;
use lowres_nmt::pipeline::{
    cmd_backtranslate, cmd_bleu, cmd_bpe_apply, cmd_bpe_learn, cmd_lm_train, cmd_mix, cmd_prep, cmd_train,
    cmd_translate, run_experiment, BacktranslateArgs, ExperimentConfig, LmTrainArgs, MixArgs, ModelSection,
    PipelineError, PrepArgs, Recipe, TrainSection, TranslateArgs,
};

#[derive(Parser)]
#[command(name = "lowres-nmt", version, about = "Neural machine translation for low-resource language pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deduplicate a parallel corpus and split it into train/valid/test.
    Prep {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long)]
        src_lang: String,
        #[arg(long)]
        tgt_lang: String,
        #[arg(long, default_value_t = 2000)]
        valid_size: usize,
        #[arg(long, default_value_t = 2000)]
        test_size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Learn a joint subword vocabulary; writes <out>.merges and <out>.tokens.
    BpeLearn {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = 8000)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment text into space-separated subwords.
    BpeApply {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train one translation model from an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Parent checkpoint to initialize from.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Train a language model on monolingual text.
    LmTrain(LmTrainCli),
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        decode: DecodeCli,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Accept a vocabulary whose fingerprint differs from the checkpoint's.
        #[arg(long)]
        force: bool,
    },
    /// Translate target-language monolingual text with a reverse model.
    Backtranslate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        mono: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        beam: usize,
        #[arg(long, default_value_t = 0.6)]
        length_penalty: f64,
        #[arg(long, default_value_t = 128)]
        max_len: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        force: bool,
    },
    /// Mix authentic and synthetic pairs; writes <out>.{src,tgt,tags}.
    Mix {
        #[arg(long)]
        parallel_src: PathBuf,
        #[arg(long)]
        parallel_tgt: PathBuf,
        #[arg(long)]
        synthetic_src: PathBuf,
        #[arg(long)]
        synthetic_tgt: PathBuf,
        #[arg(long)]
        synthetic_tags: Option<PathBuf>,
        /// Synthetic pairs per authentic pair; all synthetic pairs when absent.
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corpus BLEU in both case modes.
    Bleu {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Run a full recipe.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_recipe)]
        recipe: Recipe,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    None,
    Shallow,
    Postnorm,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Softmax,
    Sum,
}

#[derive(Args)]
struct DecodeCli {
    #[arg(long, value_enum, default_value = "none")]
    fusion: FusionArg,
    #[arg(long, default_value_t = 0.003)]
    fusion_weight: f64,
    #[arg(long, value_enum, default_value = "softmax")]
    postnorm_norm: NormArg,
    #[arg(long, default_value_t = 4)]
    beam: usize,
    #[arg(long, default_value_t = 0.6)]
    length_penalty: f64,
    #[arg(long, default_value_t = 128)]
    max_len: usize,
}

impl DecodeCli {
    fn build(&self) -> DecodeConfig {
        let fusion = match self.fusion {
            FusionArg::None => FusionConfig::none(),
            FusionArg::Shallow => FusionConfig::shallow(self.fusion_weight),
            FusionArg::Postnorm => FusionConfig::postnorm(match self.postnorm_norm {
                NormArg::Softmax => PostNormKind::Softmax,
                NormArg::Sum => PostNormKind::Sum,
            }),
        };
        DecodeConfig { beam_size: self.beam, max_len: self.max_len, length_penalty: self.length_penalty, fusion }
    }
}

#[derive(Args)]
struct LmTrainCli {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    mono: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Translation checkpoint whose vocabulary the LM must share.
    #[arg(long)]
    shared_with: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    profile: String,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_tokens: Option<usize>,
    #[arg(long)]
    warmup_steps: Option<u64>,
    #[arg(long)]
    lr_scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_recipe(s: &str) -> Result<Recipe, String> {
    s.parse().map_err(|e: PipelineError| e.to_string())
}

fn run(cmd: Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Prep { src, tgt, src_lang, tgt_lang, valid_size, test_size, seed, out_dir } => {
            let rep = cmd_prep(&PrepArgs { src, tgt, src_lang, tgt_lang, valid_size, test_size, seed, out_dir })?;
            println!("{rep}");
        }
        Command::BpeLearn { input, size, out } => {
            let v = cmd_bpe_learn(&input, size, &out)?;
            println!("{} tokens, {} merges", v.len(), v.merges().len());
        }
        Command::BpeApply { vocab, input, output } => {
            cmd_bpe_apply(&vocab, &input, &output)?;
        }
        Command::Train { config, init } => {
            let cfg = ExperimentConfig::load(&config)?;
            let sum = cmd_train(&cfg, init.as_deref())?;
            for r in &sum.records {
                println!("{r}");
            }
            println!("final checkpoint {}", sum.final_checkpoint.display());
        }
        Command::LmTrain(a) => {
            let model = ModelSection { profile: a.profile, max_len: a.max_len, ..ModelSection::default() };
            let d = TrainSection::default();
            let train = TrainSection {
                epochs: a.epochs.unwrap_or(d.epochs),
                batch_tokens: a.batch_tokens.unwrap_or(d.batch_tokens),
                warmup_steps: a.warmup_steps.unwrap_or(d.warmup_steps),
                lr_scale: a.lr_scale.unwrap_or(d.lr_scale),
                seed: a.seed.unwrap_or(d.seed),
                ..d
            };
            cmd_lm_train(&LmTrainArgs { vocab: a.vocab, mono: a.mono, out: a.out, model, train, shared_with: a.shared_with })?;
        }
        Command::Translate { checkpoint, vocab, input, output, decode, lm, workers, force } => {
            let failed =
                cmd_translate(&TranslateArgs { checkpoint, vocab, input, output, decode: decode.build(), lm, workers, force })?;
            if failed > 0 {
                log::warn!("{failed} sentences failed to decode");
            }
        }
        Command::Backtranslate { checkpoint, vocab, mono, out_dir, beam, length_penalty, max_len, workers, force } => {
            let decode = DecodeConfig { beam_size: beam, max_len, length_penalty, fusion: FusionConfig::none() };
            let c = cmd_backtranslate(&BacktranslateArgs { checkpoint, vocab, mono, out_dir, decode, workers, force })?;
            println!("{} synthetic pairs", c.len());
        }
        Command::Mix { parallel_src, parallel_tgt, synthetic_src, synthetic_tgt, synthetic_tags, ratio, seed, out } => {
            let m = cmd_mix(&MixArgs {
                parallel_src,
                parallel_tgt,
                synthetic_src,
                synthetic_tgt,
                synthetic_tags,
                ratio,
                seed,
                out,
            })?;
            println!("{} pairs", m.len());
        }
        Command::Bleu { hyp, reference } => {
            for r in cmd_bleu(&hyp, &reference, &[CaseMode::Insensitive, CaseMode::Sensitive])? {
                println!("{r}");
            }
        }
        Command::Run { config, recipe } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rep = run_experiment(&cfg, recipe)?;
            for r in &rep.test {
                println!("{r}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#!/usr/bin/env python3
"""
whisper2speech - Whisper-to-Speech Conversion Pipeline
Trains the three-stage whisper-to-normal-speech model and converts whispered audio.
"""

import functools
import sys
from pathlib import Path

import click
from rich.console import Console
from rich.panel import Panel

from src.analyzers.external_adapters import build_adapters
from src.analyzers.metrics import build_harness, evaluate
from src.audio.frame_domains import load_wav, save_wav
from src.audio.prosody import save_prosody
from src.collectors.manifest import normal_only
from src.collectors.synthetic_corpus import write_synthetic_corpus
from src.collectors.utterance_store import UtteranceStore
from src.inference.converter import PipelineModels, convert_utterance
from src.models.conformer_vae import infer_aligned
from src.models.content_encoder import encode_content, export_features
from src.trainers.common import build_provider, prepare_records, training_split
from src.trainers.stage1 import load_stage1, train_stage1
from src.trainers.stage2 import train_stage2
from src.trainers.stage3 import train_stage3
from src.utils.config_manager import PRESETS, load_run_config
from src.utils.data_manager import DataManager
from src.utils.errors import DependencyError, ValidationError
from src.utils.log import console as log_console
from src.utils.log import setup_logging
from src.visualizers.report_generator import ReportGenerator

console: Console = log_console

EXIT_VALIDATION = 1
EXIT_DEPENDENCY = 2


def handle_errors(func):
    """Map pipeline errors to exit codes: validation -> 1, missing dependency -> 2."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except DependencyError as e:
            console.print(f"❌ [red]Missing dependency: {e}[/red]")
            sys.exit(EXIT_DEPENDENCY)
        except (ValidationError, FileNotFoundError) as e:
            console.print(f"❌ [red]Error: {e}[/red]")
            for detail in getattr(e, "errors", []) or []:
                console.print(f"   [red]- {detail}[/red]")
            sys.exit(EXIT_VALIDATION)

    return wrapper


class Context:
    """Resolved configuration shared by every verb."""

    def __init__(self, config, overrides, seed, checkpoint_dir, preset):
        self.config_path = config
        self.overrides = list(overrides)
        if checkpoint_dir:
            self.overrides.append(f"paths.checkpoint_dir={checkpoint_dir}")
        self.seed = seed
        self.preset = preset
        self._run = None

    def override(self, assignment: str) -> None:
        self.overrides.append(assignment)
        self._run = None

    @property
    def run(self):
        if self._run is None:
            self._run = load_run_config(self.config_path, self.overrides, preset=self.preset, seed=self.seed)
        return self._run

    @property
    def data(self) -> DataManager:
        return DataManager(self.run.section("paths")["checkpoint_dir"])


pass_context = click.make_pass_decorator(Context)


@click.group()
@click.version_option(version="1.0.0")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), help="YAML or JSON configuration file")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a config value (repeatable)")
@click.option("--seed", type=int, default=None, help="Override the run seed")
@click.option("--checkpoint-dir", type=click.Path(file_okay=False), default=None, help="Checkpoint directory")
@click.option("--preset", type=click.Choice(PRESETS), default="toy", show_default=True, help="Built-in size preset")
@click.option("--log-level", default="INFO", show_default=True, help="Logging level")
@click.pass_context
def cli(ctx, config, overrides, seed, checkpoint_dir, preset, log_level):
    """whisper2speech - convert whispered speech into normal speech."""
    setup_logging(log_level, console)
    ctx.obj = Context(config, overrides, seed, checkpoint_dir, preset)


@cli.command("make-synth-data")
@click.option("--out", "out_dir", default=None, help="Corpus directory (default: paths.data_dir)")
@pass_context
@handle_errors
def make_synth_data(ctx: Context, out_dir):
    """Generate the paired synthetic whisper/normal corpus."""
    console.print(Panel.fit("🎙️ [bold blue]Generating Synthetic Corpus[/bold blue]", border_style="blue"))
    out_dir = out_dir or ctx.run.section("paths")["data_dir"]
    manifest = write_synthetic_corpus(ctx.run.corpus, out_dir, show_progress=True)
    console.print(f"✅ [green]Wrote {ctx.run.corpus.n_speakers * ctx.run.corpus.utterances_per_speaker} pairs[/green]")
    console.print(f"📁 [blue]Manifest: {manifest}[/blue]")


def _train(ctx: Context, stage: str, manifest, plot: bool):
    run, data = ctx.run, ctx.data
    records = prepare_records(run, manifest, show_progress=True)
    train, _ = training_split(run, records)
    store = UtteranceStore(train, run.spec16, run.spec22)
    if stage == "stage1":
        result = train_stage1(run, train, data, store, show_progress=True)
    elif stage == "stage2":
        result = train_stage2(run, normal_only(train), data, store, show_progress=True)
    else:
        result = train_stage3(run, normal_only(train), data, store, show_progress=True)
    console.print(f"✅ [green]{stage} finished after {len(result.history)} steps[/green]")
    if result.history:
        console.print(f"📉 [blue]total loss {_total(result.initial):.4f} -> {_total(result.final):.4f}[/blue]")
    console.print(f"💾 [blue]Checkpoint: {result.checkpoint}[/blue]")
    if plot and result.history:
        out = Path(run.section("paths")["output_dir"]) / f"{stage}_losses.png"
        console.print(f"🖼️ [blue]Plot: {ReportGenerator(console).plot_history(result.history, stage, str(out))}[/blue]")


def _total(losses):
    return losses.get("total", losses.get("total_g", 0.0))


@cli.command("train-stage1")
@click.option("--manifest", default=None, help="Paired manifest (default: paths.manifest or the synthetic corpus)")
@click.option("--plot", is_flag=True, help="Save a loss-curve PNG")
@pass_context
@handle_errors
def train_stage1_cmd(ctx: Context, manifest, plot):
    """Stage 1: content encoder + dual-encoder VAE on whisper/normal pairs."""
    console.print(Panel.fit("🧠 [bold green]Training Stage 1[/bold green]", border_style="green"))
    _train(ctx, "stage1", manifest, plot)


@cli.command("train-stage2")
@click.option("--manifest", default=None, help="Manifest; only its normal records are used")
@click.option("--plot", is_flag=True, help="Save a loss-curve PNG")
@pass_context
@handle_errors
def train_stage2_cmd(ctx: Context, manifest, plot):
    """Stage 2: aligner + acoustic model on normal speech."""
    console.print(Panel.fit("🧠 [bold green]Training Stage 2[/bold green]", border_style="green"))
    _train(ctx, "stage2", manifest, plot)


@cli.command("train-stage3")
@click.option("--manifest", default=None, help="Manifest; only its normal records are used")
@click.option("--plot", is_flag=True, help="Save a loss-curve PNG")
@pass_context
@handle_errors
def train_stage3_cmd(ctx: Context, manifest, plot):
    """Stage 3: vocoder fine-tuning on predicted mels."""
    console.print(Panel.fit("🔊 [bold purple]Training Stage 3[/bold purple]", border_style="purple"))
    _train(ctx, "stage3", manifest, plot)


@cli.command()
@click.option("--input", "input_wav", type=click.Path(), default=None, help="Whispered WAV to convert")
@click.option("--speaker", default=None, help="Target speaker id (lookup/external) or reference WAV (stats-pool)")
@click.option("--manifest", default=None, help="Convert the held-out whisper records of this manifest instead")
@click.option("--out", default=None, help="Output WAV (single input) or directory (manifest)")
@pass_context
@handle_errors
def convert(ctx: Context, input_wav, speaker, manifest, out):
    """Convert whispered speech to normal speech."""
    console.print(Panel.fit("🗣️ [bold cyan]Converting Whispered Speech[/bold cyan]", border_style="cyan"))
    run = ctx.run
    models = PipelineModels.load(run, ctx.data)
    provider = build_provider(run, speakers=models.speakers)

    if input_wav:
        if not speaker:
            raise click.UsageError("--speaker is required with --input")
        speaker_ref = load_wav(speaker) if Path(speaker).is_file() else speaker
        result = convert_utterance(input_wav, speaker_ref, models, provider)
        out = out or str(Path(run.section("paths")["output_dir"]) / f"{Path(input_wav).stem}_converted.wav")
        save_wav(result.waveform, out, subtype="FLOAT")
        console.print(f"✅ [green]{result.t_enc} content frames -> {result.t22} mel frames ({result.vocoder})[/green]")
        console.print(f"📁 [blue]Saved to: {out}[/blue]")
        return

    records = prepare_records(run, manifest)
    _, held_out = training_split(run, records)
    out_dir = Path(out or run.section("paths")["output_dir"])
    normals = {r.pair_id: r for r in normal_only(held_out)}
    converted = 0
    for record in held_out:
        if record.style != "whisper":
            continue
        result = convert_utterance(record.path, normals[record.pair_id], models, provider)
        save_wav(result.waveform, out_dir / f"{record.pair_id}.wav", subtype="FLOAT")
        converted += 1
    console.print(f"✅ [green]Converted {converted} held-out utterances[/green]")
    console.print(f"📁 [blue]Saved to: {out_dir}[/blue]")


@cli.command("eval")
@click.option("--manifest", default=None, help="Paired manifest (default: paths.manifest or the synthetic corpus)")
@click.option("--outputs-dir", default=None, help="Directory of converted <pair_id>.wav files")
@click.option("--out", default=None, help="JSON-lines report path")
@click.option("--baseline/--no-baseline", default=None, help="Also score the whispered inputs")
@click.option(
    "--cosine-reference", type=click.Choice(["paired_normal", "input_speaker"]), default=None, help="Speaker cosine reference"
)
@pass_context
@handle_errors
def eval_cmd(ctx: Context, manifest, outputs_dir, out, baseline, cosine_reference):
    """Score converted outputs against their paired normal references."""
    console.print(Panel.fit("📊 [bold yellow]Evaluating Conversions[/bold yellow]", border_style="yellow"))
    if cosine_reference:
        ctx.override(f"evaluation.cosine_reference={cosine_reference}")
    run = ctx.run
    evaluation = run.section("evaluation")
    records = prepare_records(run, manifest)
    _, held_out = training_split(run, records)
    outputs_dir = outputs_dir or run.section("paths")["output_dir"]
    include_baseline = evaluation.get("include_input_baseline", True) if baseline is None else baseline
    report = evaluate(
        held_out,
        outputs_dir,
        harness=build_harness(run),
        adapters=build_adapters(evaluation.get("adapters", [])),
        include_input_baseline=include_baseline,
    )
    generator = ReportGenerator(console)
    generator.print_report(report)
    out = out or str(Path(outputs_dir) / "metrics.jsonl")
    console.print(f"📁 [blue]Report: {generator.write_report(report, out)}[/blue]")


@cli.command("export-features")
@click.option("--manifest", default=None, help="Manifest whose utterances are exported")
@click.option("--out", "out_dir", required=True, help="Output directory")
@click.option("--prosody", is_flag=True, help="Also write prosody targets for normal utterances")
@click.option("--reconstructed", is_flag=True, help="Export VAE reconstructions instead of raw content features")
@pass_context
@handle_errors
def export_features_cmd(ctx: Context, manifest, out_dir, prosody, reconstructed):
    """Write content features (W2SF container) for every utterance of a manifest."""
    console.print(Panel.fit("📦 [bold magenta]Exporting Features[/bold magenta]", border_style="magenta"))
    run = ctx.run
    encoder, vae = load_stage1(run, ctx.data)
    records = prepare_records(run, manifest)
    store = UtteranceStore(records, run.spec16, run.spec22)
    out_dir = Path(out_dir)
    for record in records:
        features = encode_content(store.mel16(record), encoder)
        if reconstructed:
            features = infer_aligned(features, vae, branch=record.style)
        export_features(features, out_dir / "content" / f"{record.utt_id}.w2sf")
        if prosody and record.style == "normal":
            save_prosody(store.prosody(record), out_dir / "prosody" / f"{record.utt_id}.w2sf")
    console.print(f"✅ [green]Exported {len(records)} utterances to {out_dir}[/green]")


@cli.command()
@pass_context
@handle_errors
def status(ctx: Context):
    """Show which stage checkpoints exist."""
    console.print(Panel.fit("📊 [bold yellow]whisper2speech Status[/bold yellow]", border_style="yellow"))
    summary = ctx.data.get_data_summary()
    console.print(f"\n[bold]Checkpoints ({summary['checkpoint_dir']}):[/bold]")
    for stage in ("stage1", "stage2", "stage3"):
        info = summary["checkpoints"].get(stage)
        mark = f"✅ {info['modified']}" if info else "❌ missing"
        console.print(f"  {stage}: {mark}")
    console.print(f"  cached predicted mels: {summary['cached_mels']}")


if __name__ == "__main__":
    cli()

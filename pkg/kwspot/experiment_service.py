"""
Experiment orchestration: corpus generation, training, alignment, decoding and evaluation.

Every artefact lives under the configured workdir:

    data/                corpus (see synth.write_corpus)
    model.bin            frame classifier with priors
    lm.arpa              phone LM of the denominator graph (LF criteria)
    thresholds.json      smoothing thresholds
    confusions.json      MED confusion matrix (CTC)
    training.json        per-epoch statistics
    alignments/<split>   forced alignments
    detections_<mode>.csv, roc_<mode>.csv, metrics.json, timing.json
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

from kwspot.acoustic import (
    FrameClassifier,
    TrainingExample,
    estimate_priors,
    forced_align,
    forward,
    load_model,
    save_model,
    train_model,
)
from kwspot.decoder_service import DecoderService
from kwspot.errors import ConfigError, DataError, Infeasible, NoPath
from kwspot.formats import read_confusions, write_confusions, write_detections, write_report, write_roc
from kwspot.metrics import (
    compute_eer,
    compute_faf,
    eer_from_operating_points,
    frames_to_seconds,
    measure_rtf,
    split_trials,
)
from kwspot.models.configs import CriterionKind, ExperimentConfig, NUConfig, PostMode
from kwspot.models.reports import Detection, EerResult, MetricsReport, TimingReport, TrainingReport
from kwspot.phonelm import build_denominator_graph, export_arpa, train_ngram
from kwspot.postproc import (
    ThresholdTable,
    estimate_confusions,
    estimate_thresholds,
    greedy_ctc_decode,
    med_thresholds,
)
from kwspot.synth import Corpus, Utterance, gen_corpus, read_corpus, write_corpus
from kwspot.system import KwsSystem

logger = logging.getLogger(__name__)

T = TypeVar("T")

LF_CRITERIA = (CriterionKind.LF_MMI, CriterionKind.LF_BMMI, CriterionKind.LF_SMBR)


class ExperimentService:
    """All pipeline stages of one experiment configuration"""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.workdir = Path(config.workdir)

    # paths

    @property
    def data_dir(self) -> Path:
        return self.workdir / "data"

    @property
    def model_path(self) -> Path:
        return self.workdir / "model.bin"

    def _map(self, fn: Callable[[Utterance], T], utterances: Sequence[Utterance]) -> List[T]:
        """Apply fn to utterances in id order on the worker pool; results keep that order"""
        ordered = sorted(utterances, key=lambda u: u.utt_id)
        if self.config.threads <= 1:
            return [fn(u) for u in ordered]
        with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
            return list(pool.map(fn, ordered))

    # stages

    def gen_data(self) -> Corpus:
        corpus = gen_corpus(self.config.synth)
        write_corpus(corpus, self.data_dir)
        return corpus

    def load_corpus(self) -> Corpus:
        return read_corpus(self.data_dir)

    def subsample(self) -> int:
        return self.config.criterion.subsample if self.config.criterion.kind in LF_CRITERIA else 1

    def train(self, corpus: Optional[Corpus] = None) -> TrainingReport:
        """Train the classifier, estimate priors and calibrate the decoders on the dev split"""
        cfg = self.config
        corpus = corpus or self.load_corpus()
        system = KwsSystem.from_corpus(cfg, corpus)
        self.workdir.mkdir(parents=True, exist_ok=True)
        write_report(cfg, self.workdir / "config.json")

        train_utts = sorted(corpus.split("train"), key=lambda u: u.utt_id)
        examples = [TrainingExample(u.utt_id, u.features, system.labels(u.words)) for u in train_utts]

        denominator = None
        if cfg.criterion.kind in LF_CRITERIA:
            lm = train_ngram([ex.labels for ex in examples], cfg.lm.order, system.inventory, cfg.lm.max_ngrams)
            (self.workdir / "lm.arpa").write_text(export_arpa(lm), encoding="utf-8")
            denominator = build_denominator_graph(lm, system.topology)

        nu = None
        if cfg.train.use_nu:
            units = cfg.nu.keyword_units or frozenset(system.keyword_units())
            nu = NUConfig(alpha=cfg.nu.alpha, beta=cfg.nu.beta, keyword_units=units)

        model = FrameClassifier.create(
            corpus.feature_dim, system.topology.num_classes, cfg.train, self.subsample(),
            system.topology.class_names, seed=cfg.seed,
        )
        model, data, history = train_model(model, examples, system.topology, cfg.criterion, cfg.train,
                                           denominator, nu, cfg.threads)

        alignments = [ali for ali in self._align_examples(model, data, system) if ali is not None]
        priors = estimate_priors(alignments, system.topology.num_classes, cfg.decode.prior_floor)
        save_model(model, self.model_path, priors)

        report = TrainingReport(
            criterion=cfg.criterion.kind.value,
            topology=cfg.topology.kind.value,
            epochs=history,
            denominator_states=denominator.num_states if denominator is not None else None,
            denominator_arcs=denominator.num_arcs if denominator is not None else None,
        )
        write_report(report, self.workdir / "training.json")
        self.calibrate(corpus, system, model)
        return report

    def _align_examples(self, model: FrameClassifier, examples: Sequence[TrainingExample],
                        system: KwsSystem) -> List[Optional[List[int]]]:
        def align(ex: TrainingExample) -> Optional[List[int]]:
            try:
                return forced_align(model, ex.features, ex.labels, system.topology)
            except (Infeasible, NoPath):
                return None
        return [align(ex) for ex in sorted(examples, key=lambda e: e.utt_id)]

    def calibrate(self, corpus: Corpus, system: KwsSystem, model: FrameClassifier) -> None:
        """Smoothing thresholds (and MED confusions for CTC) from the dev split"""
        dev = sorted(corpus.split("dev"), key=lambda u: u.utt_id)

        def dev_item(u: Utterance):
            labels = system.labels(u.words)
            log_post = forward(model, u.features)
            try:
                ali = forced_align(model, u.features, labels, system.topology)
            except (Infeasible, NoPath):
                ali = None
            return labels, log_post, ali

        items = self._map(dev_item, dev)
        aligned = [(ali, lp) for _, lp, ali in items if ali is not None]
        thresholds = estimate_thresholds([a for a, _ in aligned], [lp for _, lp in aligned],
                                         system.keyword_labels, system.topology)
        write_report(thresholds, self.workdir / "thresholds.json")

        if system.is_ctc:
            blank = system.inventory.blank_id()
            pairs = [(greedy_ctc_decode(lp, blank), list(labels.units)) for labels, lp, _ in items]
            confusions = estimate_confusions(pairs, system.edit_units(), self.config.med.floor,
                                             system.boundary_unit())
            write_confusions(confusions, system.inventory, self.workdir / "confusions.json")

    def decoder(self, corpus: Optional[Corpus] = None) -> DecoderService:
        """Decoder over the trained model and calibration files"""
        corpus = corpus or read_corpus(self.data_dir, splits=())
        system = KwsSystem.from_corpus(self.config, corpus)
        if not self.model_path.exists():
            raise DataError(f"no trained model at {self.model_path}")
        model, priors = load_model(self.model_path)
        if model.num_classes != system.topology.num_classes:
            raise ConfigError(f"model has {model.num_classes} outputs, the topology needs "
                              f"{system.topology.num_classes}")
        thresholds = None
        path = self.workdir / "thresholds.json"
        if path.exists():
            thresholds = ThresholdTable.model_validate_json(path.read_text(encoding="utf-8"))
        confusions = med_table = None
        path = self.workdir / "confusions.json"
        if system.is_ctc and path.exists():
            confusions = read_confusions(path, system.inventory)
            med_table = med_thresholds(system.keyword_labels, confusions)
        return DecoderService(system, model, priors, thresholds, confusions, med_table)

    def align(self, split: str = "train") -> Dict[str, List[int]]:
        corpus = self.load_corpus()
        decoder = self.decoder(corpus)
        system = decoder.system

        def one(u: Utterance) -> Tuple[str, Optional[List[int]]]:
            try:
                return u.utt_id, forced_align(decoder.model, u.features, system.labels(u.words), system.topology)
            except (Infeasible, NoPath) as e:
                logger.warning(f"Cannot align {u.utt_id}: {e}")
                return u.utt_id, None

        result = {utt: ali for utt, ali in self._map(one, corpus.split(split)) if ali is not None}
        out = self.workdir / "alignments"
        out.mkdir(parents=True, exist_ok=True)
        lines = [f"{utt}\t{' '.join(map(str, ali))}" for utt, ali in result.items()]
        (out / split).write_text("\n".join(lines) + "\n", encoding="utf-8")
        logger.info(f"Aligned {len(result)} utterances of {split}")
        return result

    def decode(self, split: str = "test", mode: Optional[PostMode] = None) -> List[Detection]:
        mode = PostMode(mode or self.config.post)
        corpus = self.load_corpus()
        decoder = self.decoder(corpus)
        decoder.graph(self.config.decode.filler_weight)
        detections = [d for ds in self._map(lambda u: decoder.detect(u.utt_id, u.features, mode),
                                            corpus.split(split)) for d in ds]
        write_detections(detections, decoder.system.keyword_names, self.workdir / f"detections_{mode.value}.csv")
        logger.info(f"Decoded {split} with {mode.value}: {len(detections)} detections")
        return detections

    def evaluate(self, split: str = "test",
                 modes: Optional[Sequence[PostMode]] = None) -> Tuple[Dict[str, MetricsReport], TimingReport]:
        """
        EER, FAF and ROC for every post-processing mode, plus real-time factors

        metrics.json never holds timing, so it is identical across runs.
        """
        corpus = self.load_corpus()
        decoder = self.decoder(corpus)
        utts = sorted(corpus.split(split), key=lambda u: u.utt_id)
        keywords = decoder.system.keywords
        truth = [[u.contains(k) for k in keywords] for u in utts]
        negative_only = [i for i, row in enumerate(truth) if not any(row)]
        negative_ids = {utts[i].utt_id for i in negative_only}
        neg_hours = frames_to_seconds(sum(utts[i].num_frames for i in negative_only),
                                      self.config.frame_shift_ms) / 3600.0
        audio_seconds = frames_to_seconds(sum(u.num_frames for u in utts), self.config.frame_shift_ms)

        modes = list(modes) if modes else decoder.available_modes()
        for w in set(self.config.decode.sweep_weights) | {self.config.decode.filler_weight}:
            decoder.graph(w)

        reports: Dict[str, MetricsReport] = {}
        rtf: Dict[str, float] = {}
        for mode in modes:
            mode = PostMode(mode)
            start = time.perf_counter()
            detections = [d for ds in self._map(lambda u: decoder.detect(u.utt_id, u.features, mode), utts)
                          for d in ds]
            rtf[mode.value] = measure_rtf(time.perf_counter() - start, audio_seconds)

            if mode in (PostMode.SMOOTH, PostMode.MED):
                margins = self._map(lambda u: decoder.keyword_margins(decoder.log_posteriors(u.features), mode), utts)
                trials = [(truth[i][k], m) for i, row in enumerate(margins) for k, m in enumerate(row)]
                eer = compute_eer(*split_trials(trials))
            else:
                eer = self._sweep(decoder, utts, truth, mode)

            false_alarms = sum(1 for d in detections if d.utt_id in negative_ids)
            report = MetricsReport(
                mode=mode.value,
                eer=eer.eer,
                faf=compute_faf(false_alarms, neg_hours) if neg_hours > 0 else 0.0,
                positives=sum(sum(row) for row in truth),
                negatives=sum(len(row) - sum(row) for row in truth),
                detections=len(detections),
                roc=eer.roc,
            )
            reports[mode.value] = report
            write_detections(detections, decoder.system.keyword_names, self.workdir / f"detections_{mode.value}.csv")
            write_roc(eer.roc, self.workdir / f"roc_{mode.value}.csv")
            logger.info(f"{mode.value}: EER {report.eer:.4f}, FAF {report.faf:.2f}/h, RTF {rtf[mode.value]:.4f}")

        write_report(reports, self.workdir / "metrics.json")
        timing = TimingReport(rtf=rtf, audio_seconds=audio_seconds)
        write_report(timing, self.workdir / "timing.json")
        return reports, timing

    def _sweep(self, decoder: DecoderService, utts: Sequence[Utterance], truth: List[List[bool]],
               mode: PostMode) -> EerResult:
        """Operating points over the filler weights; a trial is accepted when the keyword is detected"""
        points = []
        positives = sum(sum(row) for row in truth)
        negatives = sum(len(row) - sum(row) for row in truth)
        for w in sorted(set(self.config.decode.sweep_weights), reverse=True):
            found = self._map(lambda u: {d.keyword for d in decoder.detect(u.utt_id, u.features, mode, w)}, utts)
            fa = sum(1 for i, kws in enumerate(found) for k in kws if not truth[i][k])
            miss = sum(1 for i, row in enumerate(truth) for k, hit in enumerate(row) if hit and k not in found[i])
            points.append((w, fa / negatives if negatives else 0.0, miss / positives if positives else 0.0))
        return eer_from_operating_points(points)

    def sweep(self, split: str = "test") -> EerResult:
        """Keyword-filler ROC over the configured filler weights"""
        corpus = self.load_corpus()
        decoder = self.decoder(corpus)
        utts = sorted(corpus.split(split), key=lambda u: u.utt_id)
        truth = [[u.contains(k) for k in decoder.system.keywords] for u in utts]
        for w in self.config.decode.sweep_weights:
            decoder.graph(w)
        result = self._sweep(decoder, utts, truth, PostMode.KWFILLER)
        write_roc(result.roc, self.workdir / "roc_sweep.csv")
        write_report(result, self.workdir / "sweep.json")
        logger.info(f"Filler-weight sweep: EER {result.eer:.4f} over {len(result.roc)} weights")
        return result

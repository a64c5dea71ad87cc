"""Corpus annotation, instance construction, manifests and synthetic corpora.

Transcripts are read from a tab-separated file with a header row::

    dialog_id  channel  speaker_id  start_ms  end_ms  act  text

``act`` carries the dialog-act tag (``b`` marks a Switchboard backchannel);
``speaker_id`` may be empty when the corpus does not record it.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyPool, InvalidConfig, SizeMismatch
from .features import FRAME_MS, HOP_MS, N_COEFFS

log = logging.getLogger(__name__)


class Label(enum.IntEnum):
    NO_BC = 0
    YEAH = 1
    UH_HUH = 2


class Category(enum.Enum):
    YEAH = "YEAH"
    UH_HUH = "UH_HUH"
    REJECT = "REJECT"


SPLITS = ("train", "dev", "test")


@dataclass
class Instance:
    instance_id: str
    dialog_id: str
    channel: str
    speaker_id: str
    listener_id: str
    t_ms: int
    label: str
    split: str
    audio_path: str

    def __post_init__(self):
        if self.speaker_id == self.listener_id:
            raise InvalidConfig(f"{self.instance_id}: speaker and listener are both {self.speaker_id!r}")
        if self.label not in Label.__members__:
            raise InvalidConfig(f"{self.instance_id}: unknown label {self.label!r}")

    @property
    def label_index(self) -> int:
        return int(Label[self.label])


INSTANCE_FIELDS = tuple(f.name for f in fields(Instance))


# -- lexicons ----------------------------------------------------------------

def read_lexicon_file(path) -> frozenset[str]:
    """One surface form per line; ``#`` starts a comment."""
    text = Path(path).read_text(encoding="utf-8")
    return _parse_lexicon(text)


def _parse_lexicon(text: str) -> frozenset[str]:
    out = set()
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        # markers keep their brackets; word forms are normalized like utterances
        out.add(line.lower() if line.startswith(("[", "<")) else normalize(line))
    return frozenset(out)


def _packaged(name: str) -> frozenset[str]:
    return _parse_lexicon(resources.files("bcpredict.lexicons").joinpath(name).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class TokenLexicon:
    yeah_tokens: frozenset[str]
    uhhuh_tokens: frozenset[str]
    exclusion_markers: frozenset[str] = frozenset()
    multiword_bc: frozenset[str] = frozenset()
    intensifiers: frozenset[str] = frozenset()
    single_bc: frozenset[str] = frozenset()

    def __post_init__(self):
        both = self.yeah_tokens & self.uhhuh_tokens
        if both:
            raise InvalidConfig(f"forms listed as both Yeah and Uh-huh: {sorted(both)}")

    @classmethod
    def default(cls, corpus: str = "swda") -> "TokenLexicon":
        markers = _packaged("exclusion_markers.txt")
        if corpus == "swda":
            return cls(_packaged("swda_yeah.txt"), _packaged("swda_uhhuh.txt"), markers)
        if corpus == "geco":
            return cls(_packaged("geco_yeah.txt"), _packaged("geco_uhhuh.txt"), markers,
                       _packaged("geco_multiword.txt"), _packaged("geco_intensifiers.txt"),
                       _packaged("geco_bc.txt"))
        raise InvalidConfig(f"unknown corpus {corpus!r}")

    @classmethod
    def from_dir(cls, directory, corpus: str = "swda") -> "TokenLexicon":
        """Like ``default`` but any file present in ``directory`` replaces the packaged one."""
        base = cls.default(corpus)
        d = Path(directory)

        def pick(name, current):
            p = d / name
            return read_lexicon_file(p) if p.exists() else current

        prefix = corpus + "_"
        return cls(
            pick(prefix + "yeah.txt", base.yeah_tokens),
            pick(prefix + "uhhuh.txt", base.uhhuh_tokens),
            pick("exclusion_markers.txt", base.exclusion_markers),
            pick(prefix + "multiword.txt", base.multiword_bc),
            pick(prefix + "intensifiers.txt", base.intensifiers),
            pick(prefix + "bc.txt", base.single_bc),
        )

    def covered_words(self) -> frozenset[str]:
        words = set()
        for group in (self.yeah_tokens, self.uhhuh_tokens, self.multiword_bc,
                      self.intensifiers, self.single_bc):
            for form in group:
                words.update(form.split())
        return frozenset(words)


_PUNCT = re.compile(r"[^\w\s-]", re.UNICODE)


def normalize(text: str) -> str:
    """Lowercase, drop punctuation other than hyphens, collapse whitespace."""
    return " ".join(_PUNCT.sub(" ", text.lower()).split())


def categorize_bc(utterance: str, lexicon: TokenLexicon) -> Category:
    low = utterance.lower()
    if any(m in low for m in lexicon.exclusion_markers):
        return Category.REJECT
    norm = normalize(utterance)
    if norm in lexicon.yeah_tokens:
        return Category.YEAH
    if norm in lexicon.uhhuh_tokens:
        return Category.UH_HUH
    return Category.REJECT


def geco_is_bc(words: Sequence[str] | str, duration_ms: float, lexicon: TokenLexicon) -> bool:
    """Short utterances, or ones made only of known backchannel words, count as BCs."""
    if duration_ms <= 0:
        raise ValueError("duration_ms must be positive")
    if duration_ms < 1000:
        return True
    if isinstance(words, str):
        words = [words]
    tokens = normalize(" ".join(words)).split()
    return bool(tokens) and set(tokens) <= lexicon.covered_words()


# -- instances -----------------------------------------------------------------

def sample_negatives(positives: Sequence[Instance], recording_ms: float,
                     offset_ms: int = 3000, window_ms: int = 2000,
                     listener_bc_times: dict[str, Sequence[float]] | None = None):
    """One NO_BC candidate ``offset_ms`` before each positive.

    A candidate survives when its window lies inside the recording and
    contains no backchannel of the same listener. ``listener_bc_times``
    defaults to the positives themselves. Returns (negatives, skip counts).
    """
    if listener_bc_times is None:
        listener_bc_times = defaultdict(list)
        for p in positives:
            listener_bc_times[p.listener_id].append(p.t_ms)
    times = {k: np.sort(np.asarray(v, dtype=np.float64)) for k, v in listener_bc_times.items()}
    negatives, skips = [], Counter()
    for p in positives:
        t = p.t_ms - offset_ms
        lo = t - window_ms
        if lo < 0 or t > recording_ms:
            skips["boundary"] += 1
            continue
        bcs = times.get(p.listener_id, np.empty(0))
        if np.any((bcs >= lo) & (bcs <= t)):
            skips["overlap"] += 1
            continue
        negatives.append(Instance(
            instance_id=p.instance_id + "-neg", dialog_id=p.dialog_id, channel=p.channel,
            speaker_id=p.speaker_id, listener_id=p.listener_id, t_ms=int(t),
            label=Label.NO_BC.name, split=p.split, audio_path=p.audio_path))
    return negatives, dict(skips)


def balance(positives: Sequence[Instance], negatives: Sequence[Instance]) -> list[Instance]:
    """Keep only positives that got a negative, so NO_BC is exactly half."""
    paired = {n.instance_id[: -len("-neg")] for n in negatives}
    kept = [p for p in positives if p.instance_id in paired]
    out = []
    neg_by_id = {n.instance_id: n for n in negatives}
    for p in kept:
        out.append(p)
        out.append(neg_by_id[p.instance_id + "-neg"])
    return out


def assign_interlocutor_ids(channel_speakers: dict, seed: int = 0):
    """Fill channels lacking a speaker with a uniform draw from the known pool.

    Returns (complete map, number of unique ids).
    """
    pool = sorted({s for s in channel_speakers.values() if s})
    if not pool:
        raise EmptyPool("no channel carries a known speaker id")
    rng = np.random.default_rng(seed)
    filled = {}
    for key in sorted(channel_speakers, key=str):
        sid = channel_speakers[key]
        filled[key] = sid if sid else pool[int(rng.integers(len(pool)))]
    return filled, len(set(filled.values()))


def split_conversations(dialog_ids: Sequence[str], sizes: Sequence[int],
                        seed: int | None = None) -> dict[str, str]:
    """Assign whole conversations to train/dev/test in the given order.

    With ``seed`` the dialog order is shuffled first.
    """
    sizes = list(sizes)
    if len(sizes) != 3 or any(s < 0 for s in sizes) or sum(sizes) != len(dialog_ids):
        raise SizeMismatch(f"split sizes {sizes} do not partition {len(dialog_ids)} dialogs")
    if len(set(dialog_ids)) != len(dialog_ids):
        raise SizeMismatch("duplicate dialog ids")
    order = list(dialog_ids)
    if seed is not None:
        order = [order[i] for i in np.random.default_rng(seed).permutation(len(order))]
    out, start = {}, 0
    for name, n in zip(SPLITS, sizes):
        for d in order[start:start + n]:
            out[d] = name
        start += n
    return out


def proportional_sizes(n: int, fractions=(0.8, 0.1, 0.1)) -> tuple[int, int, int]:
    dev = int(round(n * fractions[1]))
    test = int(round(n * fractions[2]))
    return n - dev - test, dev, test


# -- transcripts and annotation --------------------------------------------------

@dataclass
class Utterance:
    dialog_id: str
    channel: str
    speaker_id: str
    start_ms: float
    end_ms: float
    act: str
    text: str


TRANSCRIPT_COLUMNS = ("dialog_id", "channel", "speaker_id", "start_ms", "end_ms", "act", "text")


def read_transcript(path) -> list[Utterance]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        missing = set(TRANSCRIPT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise InvalidConfig(f"{path}: missing transcript columns {sorted(missing)}")
        return [Utterance(r["dialog_id"], r["channel"], r["speaker_id"] or "",
                          float(r["start_ms"]), float(r["end_ms"]), r["act"] or "", r["text"] or "")
                for r in reader]


@dataclass
class AnnotationResult:
    instances: list[Instance]
    rejections: list[Utterance] = field(default_factory=list)
    skips: dict = field(default_factory=dict)
    n_interlocutors: int = 0


def _other(channel: str) -> str:
    return {"A": "B", "B": "A"}.get(channel, channel + "'")


def _is_candidate(u: Utterance, by_dialog: dict, corpus: str, lexicon: TokenLexicon) -> bool:
    if corpus == "swda":
        return u.act.strip().lower() == "b"
    # GECO: produced during the other interlocutor's turn
    others = [o for o in by_dialog[u.dialog_id] if o.channel != u.channel]
    during = any(o.start_ms < u.end_ms and u.start_ms < o.end_ms for o in others)
    return during and geco_is_bc(u.text.split(), u.end_ms - u.start_ms, lexicon)


def annotate(utterances: Sequence[Utterance], lexicon: TokenLexicon, corpus: str = "swda",
             split_sizes: Sequence[int] | None = None, seed: int = 0,
             offset_ms: int = 3000, window_ms: int = 2000, audio_dir: str = "") -> AnnotationResult:
    """Turn transcripts into a balanced manifest of positives and NO_BC negatives."""
    by_dialog = defaultdict(list)
    for u in utterances:
        by_dialog[u.dialog_id].append(u)
    dialogs = sorted(by_dialog)
    speakers = {}
    for u in utterances:
        key = (u.dialog_id, u.channel)
        if u.speaker_id or key not in speakers:
            speakers[key] = u.speaker_id or speakers.get(key, "")
    for d in dialogs:  # both sides of every dialog need an id
        for ch in {u.channel for u in by_dialog[d]} | {_other(u.channel) for u in by_dialog[d]}:
            speakers.setdefault((d, ch), "")
    filled, n_ids = assign_interlocutor_ids(speakers, seed)
    sizes = split_sizes if split_sizes is not None else proportional_sizes(len(dialogs))
    split_of = split_conversations(dialogs, sizes)

    result = AnnotationResult([], n_interlocutors=n_ids)
    skips = Counter()
    for d in dialogs:
        utts = sorted(by_dialog[d], key=lambda u: (u.start_ms, u.channel))
        recording_ms = max(u.end_ms for u in utts)
        positives = []
        for u in utts:
            if not _is_candidate(u, by_dialog, corpus, lexicon):
                continue
            cat = categorize_bc(u.text, lexicon)
            if cat is Category.REJECT:
                result.rejections.append(u)
                log.info("rejected %s/%s @%d: %r", d, u.channel, u.start_ms, u.text)
                continue
            t = int(round(u.start_ms))
            if t < window_ms:
                skips["positive_too_early"] += 1
                continue
            spk_channel = _other(u.channel)
            positives.append(Instance(
                instance_id=f"{d}-{u.channel}-{t:09d}", dialog_id=d, channel=spk_channel,
                speaker_id=filled[(d, spk_channel)], listener_id=filled[(d, u.channel)],
                t_ms=t, label=cat.name, split=split_of[d],
                audio_path=str(Path(audio_dir) / f"{d}_{spk_channel}.wav") if audio_dir else f"{d}_{spk_channel}.wav"))
        negatives, s = sample_negatives(positives, recording_ms, offset_ms, window_ms)
        skips.update(s)
        result.instances.extend(balance(positives, negatives))
    result.skips = dict(skips)
    return result


# -- manifest / stats ------------------------------------------------------------

def instance_to_json(inst: Instance) -> str:
    return json.dumps({k: getattr(inst, k) for k in INSTANCE_FIELDS}, ensure_ascii=False,
                      separators=(",", ":"))


def write_manifest(path, instances: Iterable[Instance]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(instance_to_json(inst) + "\n")


def read_manifest(path) -> list[Instance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if set(rec) != set(INSTANCE_FIELDS):
                raise InvalidConfig(f"{path}:{n}: fields {sorted(rec)} != {sorted(INSTANCE_FIELDS)}")
            rec["t_ms"] = int(rec["t_ms"])
            out.append(Instance(**rec))
    return out


@dataclass
class CorpusStats:
    counts: dict
    n_conversations: int
    n_interlocutors: int

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def share(self, label: str) -> float:
        return 100.0 * self.counts.get(label, 0) / self.total if self.total else 0.0


def corpus_stats(instances: Sequence[Instance]) -> CorpusStats:
    counts = Counter(i.label for i in instances)
    ids = {i.speaker_id for i in instances} | {i.listener_id for i in instances}
    return CorpusStats({lab.name: counts.get(lab.name, 0) for lab in Label},
                       len({i.dialog_id for i in instances}), len(ids))


STATS_ROWS = (("Yeah", "YEAH"), ("Uh-huh", "UH_HUH"), ("No-BC", "NO_BC"))


def stats_csv(stats: CorpusStats) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["item", "count", "percent"])
    for title, key in STATS_ROWS:
        w.writerow([title, stats.counts.get(key, 0), f"{stats.share(key):.1f}"])
    w.writerow(["Conversations", stats.n_conversations, ""])
    w.writerow(["Interlocutors", stats.n_interlocutors, ""])
    return buf.getvalue()


# -- synthetic corpus --------------------------------------------------------------

RULES = ("audio_only", "audio_plus_listener")


@dataclass
class SynthConfig:
    rule: str = "audio_only"
    n_listeners: int = 3
    n_speakers: int = 3
    n_instances: int = 600
    split_sizes: tuple | None = None  # instance counts; default 70/15/15
    n_frames: int = 48
    noise: float = 0.5
    instances_per_dialog: int = 50
    seed: int = 0


@dataclass
class SynthCorpus:
    instances: list[Instance]
    features: dict[str, np.ndarray]  # audio stem -> (frames, 13)
    prototypes: np.ndarray  # (3, n_frames, 13)
    config: SynthConfig


def label_table(rule: str, n_listeners: int) -> np.ndarray:
    """``table[listener, prototype]`` = label; listener l shifts classes by l mod 3."""
    if rule not in RULES:
        raise InvalidConfig(f"rule must be one of {RULES}, got {rule!r}")
    c = np.arange(3)[None, :]
    shift = np.arange(n_listeners)[:, None] % 3 if rule == "audio_plus_listener" else 0
    return (c + shift) % 3 + np.zeros((n_listeners, 1), dtype=int)


def _synth_cells(rule: str, n: int, n_listeners: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Listener and prototype index per instance, balanced by construction."""
    i = np.arange(n)
    if rule == "audio_only":
        n_no = n // 2
        proto = np.where(i < n_no, 0, np.where(i < n_no + (n - n_no) // 2, 1, 2))
        listener = i % n_listeners
    else:
        listener = i % n_listeners
        proto = (i // n_listeners) % 3
    perm = rng.permutation(n)
    return listener[perm], proto[perm]


def synth_corpus(config: SynthConfig) -> SynthCorpus:
    """Audio-free corpus of noisy class-prototype windows.

    Each split is laid out as dialogs whose feature sequence is the
    concatenation of their instances' windows, so ``extract_window`` at an
    instance's ``t_ms`` returns exactly its window.
    """
    c = config
    if c.rule not in RULES:
        raise InvalidConfig(f"rule must be one of {RULES}, got {c.rule!r}")
    if c.n_instances < 30:
        raise InvalidConfig("n_instances must be >= 30")
    if c.n_listeners < 1 or c.n_speakers < 1 or c.n_frames < 1 or c.instances_per_dialog < 1:
        raise InvalidConfig("counts must be positive")
    if c.noise < 0:
        raise InvalidConfig("noise must be >= 0")
    sizes = tuple(c.split_sizes) if c.split_sizes else _default_split(c.n_instances)
    if len(sizes) != 3 or sum(sizes) != c.n_instances:
        raise InvalidConfig(f"split sizes {sizes} do not sum to {c.n_instances}")

    root = np.random.SeedSequence(c.seed)
    proto_ss, *split_ss = root.spawn(4)
    prototypes = np.random.default_rng(proto_ss).normal(size=(3, c.n_frames, N_COEFFS))
    table = label_table(c.rule, c.n_listeners)

    instances, features = [], {}
    dialog_no = 0
    for split, n, ss in zip(SPLITS, sizes, split_ss):
        rng = np.random.default_rng(ss)
        listener, proto = _synth_cells(c.rule, n, c.n_listeners, rng)
        speaker = rng.integers(c.n_speakers, size=n)
        noise = rng.normal(size=(n, c.n_frames, N_COEFFS)) * c.noise
        for start in range(0, n, c.instances_per_dialog):
            stop = min(start + c.instances_per_dialog, n)
            dialog = f"synth{dialog_no:04d}"
            stem = f"{dialog}_A"
            dialog_no += 1
            windows = prototypes[proto[start:stop]] + noise[start:stop]
            features[stem] = windows.reshape(-1, N_COEFFS)
            for slot, j in enumerate(range(start, stop)):
                t = HOP_MS * ((slot + 1) * c.n_frames - 1) + FRAME_MS
                instances.append(Instance(
                    instance_id=f"{dialog}-{slot:05d}", dialog_id=dialog, channel="A",
                    speaker_id=f"spk{speaker[j]:03d}", listener_id=f"lst{listener[j]:03d}",
                    t_ms=int(t), label=Label(int(table[listener[j], proto[j]])).name,
                    split=split, audio_path=stem + ".wav"))
    return SynthCorpus(instances, features, prototypes, config)


def _default_split(n: int) -> tuple[int, int, int]:
    return proportional_sizes(n, (0.7, 0.15, 0.15))


def bayes_accuracy(table: np.ndarray, use_listener: bool) -> float:
    """Best achievable accuracy with listeners and prototypes uniform.

    Enumerates the label table: without the listener the best guess for a
    prototype is its most frequent label across listeners.
    """
    if use_listener:
        return 1.0
    n_listeners = table.shape[0]
    best = [max(Counter(table[:, c]).values()) / n_listeners for c in range(table.shape[1])]
    return float(np.mean(best))


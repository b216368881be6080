"""Corpus ingestion and dialogue statistics.

Reads native transcript logs (or adapted external data) into a uniform
corpus model and computes the reporting tables: overall statistics,
degree-modifier rates, previous-target stay/leave frequencies, and
turn-level success rates. A small keyword tagger flags spatio-temporal
wording; it is a heuristic aid, not an annotation standard.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .scenario import Scenario, scenario_from_doc, scenario_to_doc
from .serialize import dumps_canonical

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class TokenModel:
    """Lowercase, split on whitespace and punctuation, punctuation dropped."""

    rare_threshold: int = 10

    def tokenize(self, text: str) -> List[str]:
        return _TOKEN_RE.findall(text.lower())


@dataclass
class TurnRecord:
    turn: int
    utterances: List[Tuple[str, str]]
    success: bool
    shared_count: Optional[int] = None
    category: Optional[str] = None


@dataclass
class DialogueRecord:
    id: str
    turns: List[TurnRecord]
    lst: int
    completed_turns: int
    scenario: Optional[Scenario] = None
    events: Optional[List[dict]] = None
    worker_ids: Tuple[str, ...] = ()


@dataclass
class Corpus:
    dialogues: List[DialogueRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.dialogues)

    def utterance_count(self) -> int:
        return sum(len(t.utterances) for d in self.dialogues for t in d.turns)

    def iter_utterances(self) -> Iterable[Tuple[str, int, str, str]]:
        for d in self.dialogues:
            for t in d.turns:
                for speaker, text in t.utterances:
                    yield d.id, t.turn, speaker, text

    def replayable_games(self) -> List[Tuple[Scenario, List[dict]]]:
        return [
            (d.scenario, d.events)
            for d in self.dialogues
            if d.scenario is not None and d.events
        ]


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def _dialogue_from_events(
    dialogue_id: str, header: Optional[dict], events: List[dict]
) -> DialogueRecord:
    scenario = None
    if header and header.get("payload", {}).get("scenario"):
        scenario = scenario_from_doc(header["payload"]["scenario"])
    turns: List[TurnRecord] = []
    pending_utts: List[Tuple[str, str]] = []
    current_turn = None
    for event in events:
        kind = event.get("kind")
        if kind == "utterance":
            pending_utts.append((event.get("agent") or "?", event["payload"]["text"]))
            current_turn = event.get("turn")
        elif kind == "resolution":
            payload = event.get("payload", {})
            turns.append(
                TurnRecord(
                    turn=event.get("turn", (current_turn or 0)),
                    utterances=pending_utts,
                    success=bool(payload.get("success")),
                    shared_count=payload.get("shared_count"),
                    category=payload.get("turn_category"),
                )
            )
            pending_utts = []
    lst = 0
    for t in turns:
        if not t.success:
            break
        lst += 1
    return DialogueRecord(
        id=dialogue_id,
        turns=turns,
        lst=lst,
        completed_turns=len(turns),
        scenario=scenario,
        events=events,
    )


def _ingest_native_file(path: Path) -> DialogueRecord:
    header = None
    footer = None
    events: List[dict] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            kind = record.get("kind")
            if kind == "header":
                header = record
            elif kind == "footer":
                footer = record
            elif kind in ("shift", "utterance", "selection", "resolution"):
                if "payload" not in record:
                    raise IngestError(f"{path}:{lineno}: event without payload")
                events.append(record)
            else:
                raise IngestError(f"{path}:{lineno}: unknown record kind {kind!r}")
    return _dialogue_from_events(path.stem, header, events)


def _ingest_native(path: Path) -> Corpus:
    if path.is_dir():
        files = sorted(path.glob("*.jsonl"))
        if not files:
            raise IngestError(f"no *.jsonl transcripts under {path}")
        return Corpus([_ingest_native_file(f) for f in files])
    return Corpus([_ingest_native_file(path)])


def _ingest_dialogues_jsonl(path: Path) -> Corpus:
    """Generic adapter format: one JSON dialogue per line with fields
    {id, turns: [{utterances: [[speaker, text], ...], success,
    shared_count?, category?}, ...]}."""
    dialogues = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            try:
                turns = [
                    TurnRecord(
                        turn=i + 1,
                        utterances=[(s, t) for s, t in td["utterances"]],
                        success=bool(td["success"]),
                        shared_count=td.get("shared_count"),
                        category=td.get("category"),
                    )
                    for i, td in enumerate(doc["turns"])
                ]
            except (KeyError, TypeError) as exc:
                raise IngestError(f"{path}:{lineno}: bad dialogue record: {exc}") from None
            lst = 0
            for t in turns:
                if not t.success:
                    break
                lst += 1
            dialogues.append(
                DialogueRecord(
                    id=str(doc.get("id", f"line{lineno}")),
                    turns=turns,
                    lst=lst,
                    completed_turns=len(turns),
                    worker_ids=tuple(doc.get("worker_ids", ())),
                )
            )
    return Corpus(dialogues)


Adapter = Callable[[Path], Corpus]

ADAPTER_REGISTRY: Dict[str, Adapter] = {
    "native": _ingest_native,
    "jsonl-dialogues": _ingest_dialogues_jsonl,
}


def ingest(path, fmt: str = "native") -> Corpus:
    """Load a corpus. `fmt` is a registered adapter name or a
    "module:function" path to a custom adapter for external datasets."""
    p = Path(path)
    if not p.exists():
        raise IngestError(f"{p} does not exist")
    if fmt in ADAPTER_REGISTRY:
        return ADAPTER_REGISTRY[fmt](p)
    if ":" in fmt:
        import importlib

        module_name, func_name = fmt.split(":", 1)
        adapter = getattr(importlib.import_module(module_name), func_name)
        return adapter(p)
    raise IngestError(
        f"unknown corpus format {fmt!r}; registered: {sorted(ADAPTER_REGISTRY)}"
    )


def export_corpus(corpus: Corpus, out_dir) -> List[Path]:
    """Write dialogues back as native transcripts (for dialogues carrying
    events) so ingest(export(ingest(x))) is structurally x."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for d in corpus.dialogues:
        path = out / f"{d.id}.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            if d.scenario is not None:
                header = {
                    "kind": "header",
                    "payload": {"scenario": scenario_to_doc(d.scenario)},
                }
                fh.write(dumps_canonical(header) + "\n")
            if d.events:
                for event in d.events:
                    fh.write(json.dumps(event, ensure_ascii=False) + "\n")
            else:
                seq = 0
                for t in d.turns:
                    for speaker, text in t.utterances:
                        seq += 1
                        fh.write(
                            json.dumps(
                                {
                                    "seq": seq,
                                    "kind": "utterance",
                                    "agent": speaker,
                                    "turn": t.turn,
                                    "payload": {"text": text},
                                    "wallclock": 0.0,
                                }
                            )
                            + "\n"
                        )
                    seq += 1
                    fh.write(
                        json.dumps(
                            {
                                "seq": seq,
                                "kind": "resolution",
                                "agent": None,
                                "turn": t.turn,
                                "payload": {
                                    "success": t.success,
                                    "shared_count": t.shared_count,
                                    "turn_category": t.category,
                                },
                                "wallclock": 0.0,
                            }
                        )
                        + "\n"
                    )
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def _token_frequencies(corpus: Corpus, tm: TokenModel) -> Dict[str, int]:
    freq: Dict[str, int] = {}
    for _, _, _, text in corpus.iter_utterances():
        for token in tm.tokenize(text):
            freq[token] = freq.get(token, 0) + 1
    return freq


def overall_stats(corpus: Corpus, tm: Optional[TokenModel] = None) -> dict:
    """Dialogue-level aggregate statistics (utterance and token averages,
    scores, vocabulary size, rare-token occupancy)."""
    if not corpus.dialogues:
        raise ValueError("empty corpus")
    tm = tm or TokenModel()
    n_utts = corpus.utterance_count()
    freq = _token_frequencies(corpus, tm)
    total_tf = sum(freq.values())
    rare_tf = sum(v for v in freq.values() if v < tm.rare_threshold)
    return {
        "dialogues": len(corpus.dialogues),
        "utterances_per_dialogue": n_utts / len(corpus.dialogues),
        "tokens_per_utterance": (total_tf / n_utts) if n_utts else 0.0,
        "avg_lst": sum(d.lst for d in corpus.dialogues) / len(corpus.dialogues),
        "avg_completed_turns": sum(d.completed_turns for d in corpus.dialogues)
        / len(corpus.dialogues),
        "unique_tokens": len(freq),
        "rare_token_occupancy_pct": (100.0 * rare_tf / total_tf) if total_tf else 0.0,
    }


def _vocab(corpus: Corpus, tm: TokenModel, drop_rare: bool) -> set:
    freq = _token_frequencies(corpus, tm)
    if drop_rare:
        return {t for t, v in freq.items() if v >= tm.rare_threshold}
    return set(freq)


def vocab_overlap(
    a: Corpus, b: Corpus, tm: Optional[TokenModel] = None, drop_rare: bool = False
) -> float:
    """Jaccard overlap of the two vocabularies as a percentage."""
    if not a.dialogues or not b.dialogues:
        raise ValueError("empty corpus")
    tm = tm or TokenModel()
    va, vb = _vocab(a, tm, drop_rare), _vocab(b, tm, drop_rare)
    union = va | vb
    if not union:
        return 100.0  # two empty vocabularies are identical
    return 100.0 * len(va & vb) / len(union)


def vocab_overlap_detail(
    a: Corpus, b: Corpus, tm: Optional[TokenModel] = None, drop_rare: bool = False
) -> dict:
    """Jaccard (primary) plus directional coverage, since overlap can be
    defined either way."""
    tm = tm or TokenModel()
    va, vb = _vocab(a, tm, drop_rare), _vocab(b, tm, drop_rare)
    inter = len(va & vb)
    return {
        "jaccard_pct": 100.0 * inter / len(va | vb) if va | vb else 0.0,
        "coverage_a_in_b_pct": 100.0 * inter / len(va) if va else 0.0,
        "coverage_b_in_a_pct": 100.0 * inter / len(vb) if vb else 0.0,
    }


# ---------------------------------------------------------------------------
# Degree modifiers
# ---------------------------------------------------------------------------

MODIFIER_CATEGORIES = (
    "diminishers",
    "moderators",
    "boosters",
    "approximators",
    "maximizers",
)


@dataclass(frozen=True)
class ModifierLexicon:
    """Keyword lists (unigrams and bigrams, already lowercase). Polysemous
    everyday words are deliberately left out."""

    diminishers: Tuple[str, ...]
    moderators: Tuple[str, ...]
    boosters: Tuple[str, ...]
    approximators: Tuple[str, ...]
    maximizers: Tuple[str, ...]

    def __post_init__(self):
        seen: Dict[str, str] = {}
        for cat in MODIFIER_CATEGORIES:
            for kw in getattr(self, cat):
                if kw in seen:
                    raise ValueError(
                        f"keyword {kw!r} in both {seen[kw]} and {cat}"
                    )
                seen[kw] = cat

    def items(self) -> Iterable[Tuple[str, Tuple[str, ...]]]:
        for cat in MODIFIER_CATEGORIES:
            yield cat, getattr(self, cat)


def default_lexicon() -> ModifierLexicon:
    return ModifierLexicon(
        diminishers=(
            "a bit", "slightly", "faintly", "barely", "a tad", "a touch",
            "mildly", "marginally", "a smidge", "a hair",
        ),
        moderators=(
            "fairly", "rather", "somewhat", "moderately", "reasonably",
            "relatively",
        ),
        boosters=(
            "very", "really", "extremely", "extraordinary", "extraordinarily",
            "incredibly", "remarkably", "exceptionally", "especially",
            "particularly", "significantly", "considerably", "noticeably",
            "substantially", "heavily", "strongly", "highly", "intensely",
            "immensely", "enormously", "hugely", "vastly", "drastically",
            "dramatically", "sharply", "steeply", "super",
        ),
        approximators=(
            "almost", "maybe", "probably", "nearly", "roughly",
            "approximately", "possibly", "perhaps", "likely", "seemingly",
            "sort of", "kind of", "basically", "virtually", "practically",
            "more or less", "close to", "i think", "i guess", "i believe",
            "presumably", "apparently", "arguably", "supposedly",
            "somewhere around", "give or take", "not quite", "borderline",
            "could be", "should be", "seems like", "looks like",
            "hard to tell", "if i had to guess",
        ),
        maximizers=(
            "exactly", "completely", "definitely", "perfectly", "totally",
            "entirely", "absolutely", "certainly", "precisely", "fully",
            "utterly", "wholly", "thoroughly", "surely", "clearly",
            "obviously", "undoubtedly", "unmistakably", "literally",
            "dead center", "dead on", "spot on", "straight up", "for sure",
            "without doubt", "one hundred percent", "positively",
            "categorically", "decidedly", "unquestionably", "plainly",
            "downright", "outright", "altogether", "purely", "strictly",
            "squarely",
        ),
    )


def modifier_rates(
    corpus: Corpus,
    lexicon: Optional[ModifierLexicon] = None,
    tm: Optional[TokenModel] = None,
) -> dict:
    """Keyword occurrences per 100 utterances per category. Bigrams match
    before unigrams and matches never overlap."""
    lexicon = lexicon or default_lexicon()
    tm = tm or TokenModel()
    ngram_cat: Dict[Tuple[str, ...], str] = {}
    unigram_cat: Dict[str, str] = {}
    for cat, keywords in lexicon.items():
        for kw in keywords:
            parts = tuple(tm.tokenize(kw))
            if len(parts) == 1:
                unigram_cat[parts[0]] = cat
            elif parts:
                ngram_cat[parts] = cat
    spans = sorted({len(g) for g in ngram_cat}, reverse=True)

    counts = {cat: 0 for cat in MODIFIER_CATEGORIES}
    n_utts = 0
    for _, _, _, text in corpus.iter_utterances():
        n_utts += 1
        tokens = tm.tokenize(text)
        i = 0
        while i < len(tokens):
            matched = False
            for span in spans:
                gram = tuple(tokens[i : i + span])
                if len(gram) == span and gram in ngram_cat:
                    counts[ngram_cat[gram]] += 1
                    i += span
                    matched = True
                    break
            if matched:
                continue
            cat = unigram_cat.get(tokens[i])
            if cat:
                counts[cat] += 1
            i += 1
    if n_utts == 0:
        return {cat: 0.0 for cat in MODIFIER_CATEGORIES}
    return {cat: 100.0 * c / n_utts for cat, c in counts.items()}


# ---------------------------------------------------------------------------
# Turn-level statistics
# ---------------------------------------------------------------------------

def turn_level_stats(corpus: Corpus, tm: Optional[TokenModel] = None) -> dict:
    """Success rates by (turn category x shared count), utterances per turn
    and tokens per utterance by category, and the stay/leave split among
    later turns. Failed final turns are included. Dialogues without category
    or shared-count data are excluded (logged)."""
    tm = tm or TokenModel()
    cells: Dict[Tuple[str, int], List[int]] = {}
    per_category_turns: Dict[str, int] = {}
    per_category_utts: Dict[str, int] = {}
    per_category_tokens: Dict[str, int] = {}
    stay = leave = 0
    excluded = 0
    for d in corpus.dialogues:
        usable = [t for t in d.turns if t.category and t.shared_count is not None]
        if len(usable) != len(d.turns):
            excluded += 1
            continue
        for t in usable:
            cell = cells.setdefault((t.category, t.shared_count), [0, 0])
            cell[0] += int(t.success)
            cell[1] += 1
            per_category_turns[t.category] = per_category_turns.get(t.category, 0) + 1
            per_category_utts[t.category] = per_category_utts.get(t.category, 0) + len(
                t.utterances
            )
            per_category_tokens[t.category] = per_category_tokens.get(
                t.category, 0
            ) + sum(len(tm.tokenize(text)) for _, text in t.utterances)
            if t.category == "later_stay":
                stay += 1
            elif t.category == "later_leave":
                leave += 1
    if excluded:
        logger.warning("turn_level_stats: excluded %d dialogues without category data", excluded)
    later = stay + leave
    return {
        "excluded_dialogues": excluded,
        "success_rate_pct": {
            category: {
                shared: (
                    100.0 * cells[(category, shared)][0] / cells[(category, shared)][1]
                    if (category, shared) in cells and cells[(category, shared)][1]
                    else None
                )
                for shared in (4, 5, 6)
            }
            for category in ("first", "later_stay", "later_leave")
        },
        "turn_counts": {
            f"{category}_{shared}": cells.get((category, shared), [0, 0])[1]
            for category in ("first", "later_stay", "later_leave")
            for shared in (4, 5, 6)
        },
        "utterances_per_turn": {
            cat: per_category_utts[cat] / per_category_turns[cat]
            for cat in per_category_turns
        },
        "tokens_per_utterance": {
            cat: (
                per_category_tokens[cat] / per_category_utts[cat]
                if per_category_utts[cat]
                else 0.0
            )
            for cat in per_category_turns
        },
        "stay_pct": 100.0 * stay / later if later else None,
        "leave_pct": 100.0 * leave / later if later else None,
    }


# ---------------------------------------------------------------------------
# Spatio-temporal tagging (heuristic)
# ---------------------------------------------------------------------------

_STATE_CHANGE_UNI = {
    "moves", "moving", "moved", "move", "travels", "traveling", "travelling",
    "traveled", "drifts", "drifting", "drifted", "curves", "curving",
    "curved", "heads", "heading", "headed", "crosses", "crossing", "crossed",
    "follows", "following", "followed", "bounces", "bouncing", "slides",
    "sliding", "swings", "swinging", "turns", "turning", "zigzags", "darts",
    "races", "racing", "rushes", "creeps", "creeping", "wanders",
    "wandering", "floats", "floating", "rolls", "rolling", "loops",
    "looping", "arcs", "arcing", "speeds", "slows",
}
_PREVIOUS_UNI = {
    "was", "were", "started", "starts", "began", "begins", "previously",
    "before", "originally", "initially", "earlier",
}
_PREVIOUS_BI = {
    ("started", "out"), ("starts", "out"), ("started", "off"),
    ("starts", "off"), ("last", "turn"), ("previous", "turn"),
    ("used", "to"), ("before", "it"), ("before", "they"), ("at", "first"),
}
_CURRENT_UNI = {
    "now", "ends", "ended", "ending", "lands", "landed", "landing", "stops",
    "stopped", "stopping", "finishes", "finished", "currently", "rests",
    "resting", "settles", "settled",
}
_CURRENT_BI = {
    ("ends", "up"), ("ended", "up"), ("winds", "up"), ("wound", "up"),
    ("comes", "to"), ("came", "to"), ("when", "they", "stop"),
    ("where", "it", "ends"), ("in", "the", "end"),
}


def tag_spatiotemporal(text: str, tm: Optional[TokenModel] = None) -> set:
    """Heuristic keyword flags {current_state, state_change, previous_state}.
    A rough aid for browsing corpora, not a reproduction of careful manual
    annotation."""
    tm = tm or TokenModel()
    tokens = tm.tokenize(text)
    flags = set()
    token_set = set(tokens)
    if token_set & _STATE_CHANGE_UNI:
        flags.add("state_change")
    if token_set & _PREVIOUS_UNI:
        flags.add("previous_state")
    if token_set & _CURRENT_UNI:
        flags.add("current_state")
    for n, grams, flag in (
        (2, _PREVIOUS_BI, "previous_state"),
        (2, _CURRENT_BI, "current_state"),
    ):
        for g in grams:
            span = len(g)
            for i in range(len(tokens) - span + 1):
                if tuple(tokens[i : i + span]) == g:
                    flags.add(flag)
                    break
    return flags


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

TABLE_IDS = {
    "2": "overall",
    "overall": "overall",
    "4": "modifiers",
    "modifiers": "modifiers",
    "5": "stay_leave",
    "stay_leave": "stay_leave",
    "6": "turn_level",
    "turn_level": "turn_level",
}


def write_reports(
    corpus: Corpus,
    tables: Sequence[str],
    out_dir,
    tm: Optional[TokenModel] = None,
    lexicon: Optional[ModifierLexicon] = None,
) -> List[Path]:
    """Write the selected report tables as both TSV and JSON files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tm = tm or TokenModel()
    written: List[Path] = []
    wanted = []
    for t in tables:
        key = TABLE_IDS.get(str(t).strip())
        if key is None:
            raise ValueError(f"unknown table id {t!r}; use {sorted(set(TABLE_IDS))}")
        if key not in wanted:
            wanted.append(key)

    def emit(name: str, data: dict, tsv_rows: List[Tuple]) -> None:
        json_path = out / f"{name}.json"
        json_path.write_text(
            json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        tsv_path = out / f"{name}.tsv"
        with open(tsv_path, "w", encoding="utf-8") as fh:
            for row in tsv_rows:
                fh.write("\t".join("" if v is None else str(v) for v in row) + "\n")
        written.extend([json_path, tsv_path])

    if "overall" in wanted:
        stats = overall_stats(corpus, tm)
        emit("overall", stats, [("metric", "value")] + sorted(stats.items()))
    if "modifiers" in wanted:
        rates = modifier_rates(corpus, lexicon, tm)
        emit(
            "modifiers",
            rates,
            [("category", "per_100_utterances")] + [(k, v) for k, v in rates.items()],
        )
    if "stay_leave" in wanted or "turn_level" in wanted:
        stats = turn_level_stats(corpus, tm)
        if "stay_leave" in wanted:
            data = {"stay_pct": stats["stay_pct"], "leave_pct": stats["leave_pct"]}
            emit(
                "stay_leave",
                data,
                [("previous_target", "pct"), ("stay", stats["stay_pct"]), ("leave", stats["leave_pct"])],
            )
        if "turn_level" in wanted:
            rows = [("category", "shared", "success_rate_pct", "turns")]
            for category, by_shared in stats["success_rate_pct"].items():
                for shared, rate in by_shared.items():
                    rows.append(
                        (
                            category,
                            shared,
                            rate,
                            stats["turn_counts"][f"{category}_{shared}"],
                        )
                    )
            emit("turn_level", stats, rows)
    return written

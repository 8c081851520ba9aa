"""Deterministic text rendering of structured profiles and keyword-based parsing back."""

from __future__ import annotations

import re

from .analyst import (
    MASTERY_LABELS,
    OUTLOOK_LABELS,
    TREND_LABELS,
    KCAssessment,
    KCStats,
    NextQuestion,
    StructuredProfile,
)

NEXT_HEADER = "Projected Next Question"
RECOMMEND_HEADER = "Recommendations"

MASTERY_SENTENCES = {
    "Struggling": "The student has struggled with this concept and has not yet shown a solid grasp of it.",
    "Inconsistent": "Responses on this concept are inconsistent, mixing right and wrong answers at similar levels.",
    "Developing": "The student is developing an understanding of this concept but still needs reinforcement.",
    "Proficient": "The student is proficient here, with only occasional errors.",
    "Mastered": "The student has mastered this concept.",
}
TREND_SENTENCES = {
    "Declining": "Performance on this concept has been declining over time.",
    "Flat": "Performance on this concept has stayed steady over time.",
    "Improving": "Performance on this concept has been improving over time.",
}
OUTLOOK_SENTENCES = {
    "Challenge": "Given earlier errors at this level, the question is likely to be hard for the student, presenting a challenge.",
    "Stretch": "This question is a stretch beyond what the history shows about the student.",
    "Consolidation": "This question is an opportunity to consolidate the partial understanding shown so far.",
    "Confident": "The student should be confident on this question.",
}
RECOMMEND_SENTENCES = {
    "Struggling": "Revisit the foundations of \"{kc}\" with guided practice on easier items.",
    "Inconsistent": "Practice a variety of \"{kc}\" problems to build consistency.",
    "Developing": "Keep practicing \"{kc}\" at the current difficulty to reinforce it.",
    "Proficient": "Gradually raise the difficulty of \"{kc}\" items.",
    "Mastered": "Move on from \"{kc}\" to more advanced material.",
}

# keyword lists checked in order; the earliest match in a section wins
MASTERY_KEYWORDS = {
    "Struggling": ("struggled", "struggling", "not yet shown a solid", "gap in understanding"),
    "Inconsistent": ("inconsistent", "inconsistency", "mixed results", "mix of correct"),
    "Developing": ("developing", "partial understanding", "potential understanding"),
    "Proficient": ("proficient", "good grasp", "strong understanding"),
    "Mastered": ("mastered", "full mastery"),
}
TREND_KEYWORDS = {
    "Declining": ("declining", "decline", "worsening"),
    "Flat": ("steady", "stable", "flat"),
    "Improving": ("improving", "improvement"),
}
OUTLOOK_KEYWORDS = {
    "Challenge": ("presenting a challenge", "likely to be hard", "challenging for the student"),
    "Stretch": ("stretch", "unfamiliar"),
    "Consolidation": ("consolidate", "consolidation"),
    "Confident": ("confident", "likely to answer correctly"),
}

DEFAULT_MASTERY, DEFAULT_TREND, DEFAULT_OUTLOOK = "Developing", "Flat", "Stretch"

_SECTION = re.compile(r"^\s*(?:(\d+)\.\s*)?\**\s*(.+?)\s*\**\s*:\s*\**\s*$")
_N = r"(\d+(?:\.\d+)?)"
_ATTEMPTS = re.compile(r"Attempted (\d+) question\(s\), (\d+) answered correctly")
_DIFF = re.compile(rf"Difficulty ranged from {_N} to {_N} \(mean {_N}\)")
_HALVES = re.compile(rf"Correct rate moved from {_N} in the earlier half to {_N} in the later half")
_LAST = re.compile(r"The most recent attempt was (correct|incorrect)")
_FAILED = re.compile(rf"Lowest difficulty answered incorrectly: (?:{_N}|(none))")
_NEXT = re.compile(rf"The next question covers (.+) with a difficulty of {_N}\.")


class ProfileParseError(ValueError):
    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


def _num(x: float) -> str:
    return f"{x:.3f}"


def _stats_lines(s: KCStats) -> list[str]:
    failed = "none" if s.min_failed_difficulty is None else _num(s.min_failed_difficulty)
    return [
        f"Attempted {s.attempts} question(s), {s.correct} answered correctly.",
        f"Difficulty ranged from {_num(s.min_difficulty)} to {_num(s.max_difficulty)} (mean {_num(s.mean_difficulty)}).",
        f"Correct rate moved from {_num(s.first_half_rate)} in the earlier half to {_num(s.second_half_rate)} in the later half.",
        f"The most recent attempt was {'correct' if s.last_outcome else 'incorrect'}.",
        f"Lowest difficulty answered incorrectly: {failed}.",
    ]


def render_profile(profile: StructuredProfile) -> str:
    lines = []
    for i, a in enumerate(profile.kcs, 1):
        lines.append(f"{i}. {a.kc_id}:")
        body = (_stats_lines(a.stats) if a.stats else []) + [MASTERY_SENTENCES[a.mastery], TREND_SENTENCES[a.trend]]
        lines.extend(f"   - {b}" for b in body)
    lines.append(f"{NEXT_HEADER}:")
    nq = profile.next_question
    if nq is not None:
        kcs = ", ".join(f'"{k}"' for k in nq.kc_ids)
        lines.append(f"   - The next question covers {kcs} with a difficulty of {_num(nq.difficulty)}.")
    lines.append(f"   - {OUTLOOK_SENTENCES[profile.outlook]}")
    lines.append(f"{RECOMMEND_HEADER}:")
    for a in profile.kcs:
        lines.append("   - " + RECOMMEND_SENTENCES[a.mastery].format(kc=a.kc_id))
    return "\n".join(lines) + "\n"


def _match(text: str, table: dict[str, tuple[str, ...]]) -> str | None:
    low = text.lower()
    best, best_pos = None, None
    for label, words in table.items():
        for w in words:
            pos = low.find(w)
            if pos >= 0 and (best_pos is None or pos < best_pos):
                best, best_pos = label, pos
    return best


def _split_sections(text: str) -> list[tuple[str, list[str]]]:
    sections: list[tuple[str, list[str]]] = []
    for line in text.splitlines():
        m = _SECTION.match(line)
        if m and not line.strip().startswith("-"):
            sections.append((m.group(2).strip().strip('"'), []))
        elif sections:
            sections[-1][1].append(line.strip().lstrip("-").strip())
    return sections


def _is_next(title: str) -> bool:
    t = title.lower()
    return "next question" in t


def _is_other(title: str) -> bool:
    t = title.lower()
    return any(w in t for w in ("recommendation", "overall", "summary"))


def _parse_stats(kc: str, body: str) -> KCStats | None:
    m_att, m_diff, m_half = _ATTEMPTS.search(body), _DIFF.search(body), _HALVES.search(body)
    m_last, m_fail = _LAST.search(body), _FAILED.search(body)
    if not (m_att and m_diff and m_half and m_last):
        return None
    failed = None
    if m_fail and m_fail.group(1) is not None:
        failed = float(m_fail.group(1))
    return KCStats(kc, int(m_att.group(1)), int(m_att.group(2)), float(m_diff.group(1)),
                   float(m_diff.group(2)), float(m_diff.group(3)), float(m_half.group(1)),
                   float(m_half.group(2)), m_last.group(1) == "correct", failed)


def parse_profile(text: str, stats: list[KCStats] | None = None,
                  next_question: NextQuestion | None = None) -> StructuredProfile:
    """Recover labels from rendered (or LLM-written, similarly structured) profile text.

    ``stats`` attaches known statistics by KC name; otherwise they are read back from the
    text when present.  Missing labels fall back to Developing/Flat/Stretch with a warning.
    """
    known = {s.kc_id: s for s in stats or []}
    kcs: list[KCAssessment] = []
    warnings: list[str] = []
    outlook_text = None
    for title, lines in _split_sections(text):
        body = " ".join(lines)
        if _is_next(title):
            outlook_text = " ".join(ln for ln in lines if not _NEXT.search(ln))
            if next_question is None:
                m = _NEXT.search(body)
                if m:
                    ids = tuple(k.strip().strip('"') for k in m.group(1).split('", "'))
                    next_question = NextQuestion(ids, float(m.group(2)))
            continue
        if _is_other(title):
            continue
        mastery = _match(body, MASTERY_KEYWORDS)
        trend = _match(body, TREND_KEYWORDS)
        parsed_stats = known.get(title) or _parse_stats(title, body)
        if mastery is None and trend is None and parsed_stats is None:
            continue
        if mastery is None:
            warnings.append(f"{title}: no mastery keyword, defaulted to {DEFAULT_MASTERY}")
            mastery = DEFAULT_MASTERY
        if trend is None:
            warnings.append(f"{title}: no trend keyword, defaulted to {DEFAULT_TREND}")
            trend = DEFAULT_TREND
        kcs.append(KCAssessment(title, mastery, trend, parsed_stats))
    if not kcs:
        raise ProfileParseError("no KC sections found in profile text", text)
    outlook = _match(outlook_text, OUTLOOK_KEYWORDS) if outlook_text is not None else None
    if outlook is None:
        warnings.append(f"no outlook found, defaulted to {DEFAULT_OUTLOOK}")
        outlook = DEFAULT_OUTLOOK
    return StructuredProfile(kcs, outlook, next_question, text, warnings)


assert set(MASTERY_SENTENCES) == set(MASTERY_LABELS)
assert set(TREND_SENTENCES) == set(TREND_LABELS)
assert set(OUTLOOK_SENTENCES) == set(OUTLOOK_LABELS)

"""Prompt construction, completion-API client with a deterministic on-disk
cache, and extraction of programs / io tests / relation checks from completions.

Three prompt families per problem:

* program prompt — the dataset prompt itself ("humaneval" tag) or a function
  header with the task text as docstring ("mbpp" tag);
* io-test prompt — the program prompt with a ``pass`` body, ending exactly with
  ``assert <entry_point>(`` so completions continue the assertion;
* relation prompt — a fixed two-shot prefix (one per dataset style) followed by
  the problem as "# Problem 3" and a "# Test 3" trailer inviting a
  ``test_<entry_point>`` harness.

The two-shot prefixes are frozen verbatim, including their quirks (stray
spaces, ``test_repeat_vowe``, unbalanced ``List([int]``); changing a byte
changes every cache key downstream.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .corpus import Problem, ProgramSample, SpecKind, SpecSample, ValidationError

logger = logging.getLogger(__name__)

PROGRAM_IO_STOP_TOKENS: tuple[str, ...] = ("\ndef", "\n#", "\nclass", "\nif", "\nassert", "\nprint")
RELATION_STOP_TOKEN = "\n# Problem"

RELATION_PREFIX_HUMANEVAL = '''# Problem 1

from typing import List

def filtered_even_integers(input_list: List([int]) -> List[int]:
    """ Given a list of integers, return a list that filters out the even integers.
    >>>  filtered_even_integers([1, 2, 3, 4])
    [1, 3]
    >>> filtered_even_integers([5, 4, 3, 2, 1])
    [5, 3, 1]
    >>> filtered_even_integers([10, 18, 20])
    []
    """
    # TODO
    pass

# Test 1

def test_filtered_even_integers(input_list: List()):
    """ Given an input `input_list`, test whether the function `filtered_even_integers` is implemented correctly.
    """
    output_list = filtered_even_integers(input_list)
    # check if the output list only contains odd integers
    for integer in output_list:
        assert integer 
    # check if all the integers in the output list can be found in the input list
    for integer in output_list:
        assert integer in input_list

# run the testing function `test_filtered_even_integers` on a  new testcase
test_filtered_even_integers([31, 24, 18, 99, 1000, 523, 901])

# Problem 2

def repeat_vowel(input_str: str) -> str:
    """ Return a string where the vowels (`a`, `e`, `i`, `o`, `u`, and their capital letters) are repeated twice in place.
    >>> repeat_vowel('abcdefg')
    'aabcdeefg'
    >>> repeat_vowel('Amy Emily Uber')
    'AAmy EEmiily UUbeer'
    """
    # TODO
    pass

# Test 2

def test_repeat_vowel(input_str: str) :
    """ Given an input `input_str`, test whether the function `repeat_vowel` is implemented correctly.
    """
    output_str = repeat_vowel(input_str)
    vowels = ['a', 'A', 'e', 'E', 'i', 'I', 'o', 'O', 'u', 'U']
    # check if the number of vowels in the  output string is doubled
    # First get the number of vowels in the input
    number_of_vowels_input = sum([input_str.count(vowel) for vowel in vowels])
    # Then get the number of vowels in the output
    number_of_vowels_output = sum([output_str.count(vowel) for vowel in vowels])
    assert number_of_vowels_input * 2 == number_of_vowels_output

# run the testing function `test_repeat_vowel` on a new testcase
test_repeat_vowe('ABCDEabcdeABCDE YOUUOY')'''

RELATION_PREFIX_MBPP = '''# Problem 1

from typing import List

# Given a list of integers, return a list that filters out the even integers.
def filtered_even_integers(input_list: List([int]) -> List[int]:
    pass # To-do: Implement

# Test 1

def test_filtered_even_integers(input_list: List()):
    """ Given an input `input_list`, test whether the function `filtered_even_integers` is implemented correctly.
    """
    output_list = filtered_even_integers(input_list)
    # check if the output list only contains odd integers
    for integer in output_list:
        assert integer 
    # check if all the integers in the output list can be found in the input list
    for integer in output_list:
        assert integer in input_list

# run the testing function `test_filtered_even_integers` on a  new testcase
test_filtered_even_integers([31, 24, 18, 99, 1000, 523, 901])

# Problem 2

# Return a string where the vowels (`a`, `e`, `i`, `o`, `u`, and their capital letters) are repeated twice in place
def repeat_vowel(input_str: str) -> str:
    pass # To-do: Implement

# Test 2

def test_repeat_vowel(input_str: str) :
    """ Given an input `input_str`, test whether the function `repeat_vowel` is implemented correctly.
    """
    output_str = repeat_vowel(input_str)
    vowels = ['a', 'A', 'e', 'E', 'i', 'I', 'o', 'O', 'u', 'U']
    # check if the number of vowels in the  output string is doubled
    # First get the number of vowels in the input
    number_of_vowels_input = sum([input_str.count(vowel) for vowel in vowels])
    # Then get the number of vowels in the output
    number_of_vowels_output = sum([output_str.count(vowel) for vowel in vowels])
    assert number_of_vowels_input * 2 == number_of_vowels_output

# run the testing function `test_repeat_vowel` on a new testcase
test_repeat_vowe('ABCDEabcdeABCDE YOUUOY')'''


class SamplingError(RuntimeError):
    """Completion endpoint failure or unusable cache state."""


def build_program_prompt(problem: Problem) -> str:
    """Prompt whose completion, appended verbatim, forms the candidate program."""
    if problem.dataset_tag == "humaneval":
        return problem.prompt
    if problem.dataset_tag == "mbpp":
        body = "\n".join(f"    {line}" for line in problem.prompt.splitlines())
        return f'def {problem.entry_point}(...):\n    """\n{body}\n    """\n'
    raise ValidationError(f"problem {problem.id!r}: unknown dataset_tag {problem.dataset_tag!r}")


def build_io_spec_prompt(problem: Problem) -> str:
    """Program prompt with a stub body, ending exactly at ``assert <entry_point>(``."""
    base = build_program_prompt(problem)
    if not base.endswith("\n"):
        base += "\n"
    return (
        base
        + "    pass # To-do: implement\n"
        + "\n"
        + f"# Check if {problem.entry_point} works\n"
        + f"assert {problem.entry_point}("
    )


def build_relation_prompt(problem: Problem) -> str:
    """Two-shot prefix plus the problem as "# Problem 3", ready for a test harness."""
    if problem.dataset_tag == "humaneval":
        prefix = RELATION_PREFIX_HUMANEVAL
        statement = problem.prompt
        if not statement.endswith("\n"):
            statement += "\n"
        statement += "    pass # To-do: implement\n"
    elif problem.dataset_tag == "mbpp":
        prefix = RELATION_PREFIX_MBPP
        commented = "\n".join(f"# {line}" for line in problem.prompt.splitlines())
        statement = f"{commented}\ndef {problem.entry_point}(...):\n    pass # To-do: implement\n"
    else:
        raise ValidationError(
            f"problem {problem.id!r}: unknown dataset_tag {problem.dataset_tag!r}"
        )
    return f"{prefix}\n\n# Problem 3\n\n{statement}\n# Test 3\n\n"


@dataclass(frozen=True)
class PromptBundle:
    program_prompt: str
    io_spec_prompt: str
    relation_prompt: str


def build_prompts(problem: Problem) -> PromptBundle:
    return PromptBundle(
        program_prompt=build_program_prompt(problem),
        io_spec_prompt=build_io_spec_prompt(problem),
        relation_prompt=build_relation_prompt(problem),
    )


@dataclass
class SamplerConfig:
    endpoint_url: str
    model_name: str
    temperature: float = 0.8
    top_p: float = 1.0
    max_tokens: int = 580
    n_programs: int = 100
    n_spec_generations: int = 100
    stop_tokens_program_io: tuple[str, ...] = PROGRAM_IO_STOP_TOKENS
    stop_token_relation: str = RELATION_STOP_TOKEN
    cache_dir: Path = Path("completion-cache")
    api_key_env_var: str = "COMPLETION_API_KEY"
    offline: bool = False
    request_chunk_size: int = 20
    max_retries: int = 3
    retry_backoff_s: float = 1.0
    request_timeout_s: float = 120.0

    def validate(self) -> None:
        if self.temperature < 0:
            raise ValidationError(f"temperature must be >= 0, got {self.temperature}")
        if self.n_programs < 1:
            raise ValidationError(f"n_programs must be >= 1, got {self.n_programs}")
        if not self.stop_tokens_program_io or not self.stop_token_relation:
            raise ValidationError("stop token lists must be non-empty")


def truncate_at_stops(text: str, stops: tuple[str, ...] | list[str]) -> str:
    cut = len(text)
    for stop in stops:
        pos = text.find(stop)
        if pos != -1:
            cut = min(cut, pos)
    return text[:cut]


class CompletionClient:
    """Synchronous completions-endpoint client with per-sample file caching.

    Each sample is cached under ``cache_dir/<request hash>/<index>.txt`` holding
    the raw completion text; cache hits never re-contact the endpoint, and a
    fully-populated cache makes sampling a pure function of its inputs.
    """

    def __init__(self, config: SamplerConfig, session: requests.Session | None = None):
        config.validate()
        self.config = config
        self.session = session or requests.Session()

    def _request_key(self, prompt: str, stops: tuple[str, ...]) -> str:
        payload = json.dumps(
            {
                "endpoint": self.config.endpoint_url,
                "model": self.config.model_name,
                "prompt": prompt,
                "temperature": self.config.temperature,
                "top_p": self.config.top_p,
                "max_tokens": self.config.max_tokens,
                "stop": list(stops),
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def _cache_path(self, key: str, index: int) -> Path:
        return Path(self.config.cache_dir) / key / f"{index}.txt"

    def _post(self, prompt: str, n: int, stops: tuple[str, ...]) -> list[str]:
        body = {
            "model": self.config.model_name,
            "prompt": prompt,
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "max_tokens": self.config.max_tokens,
            "n": n,
            "stop": list(stops),
        }
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env_var, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        delay = self.config.retry_backoff_s
        last_status: object = None
        for attempt in range(self.config.max_retries + 1):
            try:
                response = self.session.post(
                    self.config.endpoint_url,
                    json=body,
                    headers=headers,
                    timeout=self.config.request_timeout_s,
                )
                last_status = response.status_code
                if response.status_code == 429 or response.status_code >= 500:
                    raise SamplingError(f"retryable status {response.status_code}")
                response.raise_for_status()
                data = response.json()
                texts = [choice["text"] for choice in data["choices"]]
                if len(texts) != n:
                    raise SamplingError(f"endpoint returned {len(texts)} choices, expected {n}")
                return texts
            except (requests.ConnectionError, requests.Timeout, SamplingError) as exc:
                if attempt == self.config.max_retries:
                    raise SamplingError(
                        f"completion request failed after {attempt + 1} attempts "
                        f"(last status: {last_status}): {exc}"
                    ) from exc
                logger.warning("completion request failed (%s); retrying in %.1fs", exc, delay)
                time.sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")

    def sample(self, prompt: str, count: int, stops: tuple[str, ...] | list[str]) -> list[str]:
        """``count`` completions for ``prompt``, truncated at the first stop string."""
        if count == 0:
            return []
        stops = tuple(stops)
        key = self._request_key(prompt, stops)
        paths = [self._cache_path(key, i) for i in range(count)]
        missing = [i for i, p in enumerate(paths) if not p.exists()]
        if missing and self.config.offline:
            raise SamplingError(
                f"offline mode: cache {key} is missing completion indices {missing}"
            )
        pos = 0
        while pos < len(missing):
            chunk = missing[pos : pos + self.config.request_chunk_size]
            texts = self._post(prompt, len(chunk), stops)
            for index, text in zip(chunk, texts):
                path = paths[index]
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(".tmp")
                tmp.write_text(text, encoding="utf-8")
                tmp.replace(path)
            pos += len(chunk)
        return [
            truncate_at_stops(p.read_text(encoding="utf-8"), stops) for p in paths
        ]


def sample_completions(
    prompt: str, count: int, stops: tuple[str, ...] | list[str], config: SamplerConfig
) -> list[str]:
    return CompletionClient(config).sample(prompt, count, stops)


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

_BRACKETS = {")": "(", "]": "[", "}": "{"}


def is_complete_single_line(line: str) -> bool:
    """Weak completeness filter: balanced (), [], {} and closed quotes outside strings."""
    stack: list[str] = []
    quote: str | None = None
    escaped = False
    for ch in line:
        if quote is not None:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == quote:
                quote = None
            continue
        if ch in ("'", '"'):
            quote = ch
        elif ch in "([{":
            stack.append(ch)
        elif ch in ")]}":
            if not stack or stack[-1] != _BRACKETS[ch]:
                return False
            stack.pop()
    return quote is None and not stack


def extract_io_tests(
    completions: list[str], entry_point: str, problem_id: str
) -> tuple[list[SpecSample], int]:
    """Distinct single-line assertions harvested from io-prompt completions.

    Each completion continues ``assert <entry_point>(``, so that prefix is
    re-attached before splitting into lines. Assert lines that do not call the
    entry point or are syntactically incomplete are skipped and counted.
    """
    prefix = f"assert {entry_point}("
    seen: dict[str, None] = {}
    skipped = 0
    for completion in completions:
        for line in (prefix + completion).splitlines():
            if not line.startswith("assert "):
                continue
            if not line.startswith(prefix) or not is_complete_single_line(line):
                skipped += 1
                continue
            seen.setdefault(line)
    specs = [
        SpecSample(problem_id=problem_id, kind=SpecKind.IO_TEST, index=i, source=line)
        for i, line in enumerate(seen)
    ]
    return specs, skipped


def _has_invocation(completion: str, name: str, def_end: int) -> bool:
    start = 0
    while True:
        pos = completion.find(name, start)
        if pos == -1:
            return False
        start = pos + 1
        if pos < def_end:
            continue
        rest = completion[pos + len(name):].lstrip(" ")
        if not rest.startswith("("):
            continue
        before = completion[:pos].rstrip()
        if before.endswith("def"):
            continue
        return True


def extract_relation_specs(
    completions: list[str], entry_point: str, problem_id: str
) -> tuple[list[SpecSample], int]:
    """One relation check per completion that defines and later invokes a test function."""
    seen: dict[str, None] = {}
    skipped = 0
    for completion in completions:
        source = completion.strip("\n")
        def_pos = None
        name = None
        for line_start, line in _iter_line_spans(source):
            stripped = line.lstrip()
            if stripped.startswith("def test_"):
                candidate = stripped[4:].split("(")[0].strip()
                if candidate:
                    def_pos = line_start + len(line)
                    name = candidate
                    break
        if name is None or not _has_invocation(source, name, def_pos or 0):
            skipped += 1
            continue
        seen.setdefault(source)
    specs = [
        SpecSample(problem_id=problem_id, kind=SpecKind.RELATION, index=i, source=src)
        for i, src in enumerate(seen)
    ]
    return specs, skipped


def _iter_line_spans(text: str):
    offset = 0
    for line in text.splitlines(keepends=True):
        yield offset, line
        offset += len(line)


def assemble_programs(problem: Problem, completions: list[str]) -> list[ProgramSample]:
    """Candidate programs are the program prompt plus each completion, all kept."""
    prompt = build_program_prompt(problem)
    return [
        ProgramSample(problem_id=problem.id, index=i, source=prompt + completion)
        for i, completion in enumerate(completions)
    ]

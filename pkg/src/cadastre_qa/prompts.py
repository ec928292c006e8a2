"""Prompt templates for the text-to-program agents.

Every template puts its machine-readable span last, after any reasoning the
model emits, which is what the gateway parsers rely on. Dataset context is
rendered from the declarative schema config, never hardcoded.
"""

from __future__ import annotations

from typing import Mapping, Sequence

from .entity_search import EntityMatch
from .llm_gateway import format_reference_list
from .tabular_store import DatasetSpec

# Generated programs see each dataset preloaded as a dataframe under these
# names; the executor and the coder prompt must agree on them.
DATASET_FRAME_VARS = {1: "df_1740", 2: "df_1808", 3: "df_landmarks"}

ANSWER_FORMAT_TOKENS = {
    "yes_no": "yes/no",
    "number": "numerical",
    "entity": "a single textual entity name",
}


def frame_var(dataset_number: int) -> str:
    return DATASET_FRAME_VARS.get(dataset_number, f"df_{dataset_number}")


def dataset_overview(specs: Mapping[int, DatasetSpec]) -> str:
    parts = [
        f"dataset {number} ({spec.name})" for number, spec in sorted(specs.items())
    ]
    return "; ".join(parts)


def dataset_descriptions(specs: Mapping[int, DatasetSpec]) -> str:
    """Column-level context block generated from the schema config."""
    lines = []
    for number, spec in sorted(specs.items()):
        lines.append(f"Dataset {number}: {spec.name} (table {spec.schema.table_name})")
        for col in spec.schema.columns:
            lines.append(f"  - {col.name} [{col.value_kind}]: {col.description}")
    return "\n".join(lines)


def analysis_system_prompt(specs: Mapping[int, DatasetSpec]) -> str:
    return (
        "You are an expert historian. You are working with "
        f"{len(specs)} datasets: {dataset_overview(specs)}. "
        "In the buildings datasets each row refers to a separate building, "
        "while in the landmarks dataset each row refers to a separate landmark.\n\n"
        f"{dataset_descriptions(specs)}"
    )


def python_system_prompt(specs: Mapping[int, DatasetSpec]) -> str:
    preload = ", ".join(
        f"dataset {number} as {frame_var(number)}" for number in sorted(specs)
    )
    return (
        "You are a highly skilled Python developer with expertise in data "
        f"analysis. You are working with {len(specs)} datasets: "
        f"{dataset_overview(specs)}. "
        "In the buildings datasets each row refers to a separate building, "
        "while in the landmarks dataset each row refers to a separate landmark. "
        f"The datasets are already loaded as pandas DataFrames: {preload}.\n\n"
        f"{dataset_descriptions(specs)}"
    )


REFERENCE_EXTRACTION_TEMPLATE = """\
Given a question, you need to match the phrases in the question with the columns in the dataset if applicable. Only focus on the phrases that refer to one or more columns in any of the above datasets. If none of the phrases refer to a specific dataset column, return an empty list.
If the question only asks about the first period, phrases should be matched to column(s) in dataset 1. If the question only asks about the second period, phrases should be matched to column(s) in dataset 2. If the question asks about both datasets, phrases can be matched to column(s) in both datasets 1 and 2.
Your output should be in the format [(detected_phrase_1, column_name_1, dataset_number_1), (detected_phrase_2, column_name_2, dataset_number_2), ...]
Note that the same phrase could correspond to a column that exists in more than 1 dataset.
Note that if a phrase refers to more than one column in a single dataset, consider each column name separately.
Note that every row is about a separate building. When the question is about a building / buildings, it is referring to the whole dataset, and not a specific column.

For example:
If the question is "Which squares are surrounded by the most diverse set of building functions from 1740?", output [("squares", "landmark_type", 3), ("building functions", "building_functions", 1)], since "squares" corresponds to the "landmark_type" column in the landmarks dataset, the information about "building functions" can be found in the column "building_functions", and the question is asking about the earlier period, thus dataset 1.

Examples:

Question: "What is the average distance to the nearest square?"
Output: [("square", "landmark_type", 3)]

Question: "How many houses are located near Santa Maria della Salute in 1740?"
Output: [("houses", "building_functions", 1), ("Santa Maria della Salute", "landmark_name", 3)]

Question: "What is the average rent price of workshops in San Polo in 1808?"
Output: [("rent price", "rent_price", 2), ("workshops", "building_functions", 2), ("San Polo", "district", 2)]

Question: "How many families present in Venice in 1740 still exist in the 1808?"
Output: [("families", "owner_family_name", 1), ("families", "owner_family_name", 2)]

Question: "How many people live in Venice in 1808?"
Output: [("people", "owner_first_name", 2), ("people", "owner_family_name", 2)]

Please match the relevant phrases with their corresponding column names for the following question and respond, in a natural language, in the format [(detected_phrase, column_name, dataset_number)].
Question: {question}

Let's think step by step:
"""


def reference_extraction_prompt(question: str) -> str:
    return REFERENCE_EXTRACTION_TEMPLATE.format(question=question)


SPECIFIC_VALUE_TEMPLATE = """\
You are given a mapping between a phrase and a column of a dataset. Your task is to hypothesise if the given phrase could correspond to a specific value in the matching column depending on the definition and data type of what should be given in the columns.
Respond [[True]] if you think the phrase may correspond to one or more specific values in the corresponding column.
Respond [[False]] if you think the phrase is just referring to the corresponding column in general, not possibly to any specific value.
Note that the dataset is referred to with its number.

For example:
If the mapping is ("squares", "landmark_type", 3), respond [[True]] as "squares" is a specific value that should be found in the column "landmark_type".
If the mapping is ("building functions", "building_functions", 1), respond [[False]], as "building functions" just refers to the "building_functions" column in general, and is not a specific value we are looking for.
Give your answer between [[]], for example [[True]] or [[False]]

Examples:

Mapping: [("square", "landmark_type", 3)]
Output: [[True]]

Mapping: [("Santa Maria della Salute", "landmark_name", 3)]
Output: [[True]]

Mapping: [("workshops", "building_functions", 2)]
Output: [[True]]

Mapping: [("families", "owner_family_name", 1)]
Output: [[False]]

Mapping: [("near houses", "building_functions", 2)]
Output: [[True]]

Mapping: [("people", "owner_family_name", 2)]
Output: [[False]]

Please hypothesise, in a natural language, if the given phrase in Mapping may refer to a specific value in the corresponding column. Respond with [[True]] or [[False]].
Mapping: {mapping}

Output:
"""


def specific_value_prompt(reference: tuple[str, str, int]) -> str:
    return SPECIFIC_VALUE_TEMPLATE.format(mapping=format_reference_list([reference]))


def _entities_block(entities: Sequence[EntityMatch]) -> str:
    if not entities:
        return "(none)"
    lines = []
    for match in entities:
        values = ", ".join(repr(v) for v in match.values) or "no matches"
        lines.append(
            f'- "{match.phrase}" -> dataset {match.dataset_number}, '
            f'column "{match.column}", {match.tier} matches: [{values}]'
        )
    return "\n".join(lines)


def _references_block(references: Sequence[tuple[str, str, int]]) -> str:
    if not references:
        return "(none)"
    return format_reference_list(list(references))


PLAN_TEMPLATE = """\
Instruction:
First understand the problem, and provide a step-by-step data analysis plan only in natural language to answer the question using the provided datasets. Be as clear and explicit as possible in your instructions.

You are given:
- Question
- Extracted Information of Entities: This contains the dataset and the column that the entity matches to, and the corresponding exact matches found in the dataset
- References to Corresponding Dataset and Column: This contains phrases found in the question linked to the specific dataset and column
- Expected Answer Format: yes/no or numerical or a single textual entity name

Requirements:
- The final answer should be in the format of {answer_format}.
- Use the provided entity information and datasets
- If any of the entity information or references is meaningless, ignore it.

Question:
{question}

Extracted Information of Entities:
{entities}

References to Corresponding Dataset and Column:
{references}

Expected Answer Format:
{answer_format}

Step by Step Plan in Natural Language:
"""


def plan_prompt(
    question: str,
    entities: Sequence[EntityMatch],
    references: Sequence[tuple[str, str, int]],
    answer_format: str,
) -> str:
    return PLAN_TEMPLATE.format(
        question=question,
        entities=_entities_block(entities),
        references=_references_block(references),
        answer_format=ANSWER_FORMAT_TOKENS[answer_format],
    )


CODE_TEMPLATE = """\
Instruction:
Your task is to generate Python code based on the provided detailed plan to answer the given question using the provided datasets.

Requirements:
- Use the necessary libraries for data analysis in Python (e.g., pandas, numpy).
- The code should be well-structured, complete, and intended to be executed as a whole.
- Write your code in the most computationally efficient way.
- Include all code in a single code block.
- The datasets are already loaded as pandas DataFrames: {frames}.
- Give your final answer in the format of {answer_format}.
- End your code by printing only the final answer strictly following this format: "[[final_answer]]", for example: print(f"The answer is: [[{{final_answer}}]]")
- Never use `exit()` function.

Question:
{question}

Step-by-Step Plan:
{plan}

Python Code:
"""


def code_prompt(
    question: str,
    plan: str,
    answer_format: str,
    dataset_numbers: Sequence[int],
) -> str:
    frames = ", ".join(
        f"dataset {n} as {frame_var(n)}" for n in sorted(dataset_numbers)
    )
    return CODE_TEMPLATE.format(
        question=question,
        plan=plan,
        answer_format=ANSWER_FORMAT_TOKENS[answer_format],
        frames=frames or "(none)",
    )


DEBUG_TEMPLATE = """\
Instruction:
Debug and rewrite the provided Python code. The code follows the given plan to answer the given question using the given datasets, but it contains an error. Based on the error message, could you correct the code and provide a revised version?

You are given:
- Question
- Extracted Information of Entities: This contains the dataset and the column that the entity matches to, and the corresponding exact matches found in the dataset
- References to Corresponding Dataset and Column: This contains phrases found in the question linked to the specific dataset and column
- A detailed plan to write Python code that answers the question
- Incorrect python code that raises an error
- Corresponding error message

Requirements:
- If any of the entity information or references is meaningless, ignore it.
- Use the necessary libraries for data analysis in Python (e.g., pandas, numpy).
- The code should be well-structured, complete and intended to be executed as a whole.
- Write your code in the most computationally efficient way.
- All of your code should be included in a single code block.
- The datasets are already loaded as pandas DataFrames: {frames}.
- Give your final answer in the format of {answer_format}.
- End your code by printing only the final answer strictly following this format: "[[final_answer]]", for example: print(f"The answer is: [[{{final_answer}}]]")
- Never use `exit()` function.

Question:
{question}

Extracted Information of Entities:
{entities}

References to Corresponding Dataset and Column:
{references}

Step by Step Plan:
{plan}

Incorrect Python Code:
{code}

Error Message:
{error_message}

Corrected Python Code:
"""


def debug_prompt(
    question: str,
    entities: Sequence[EntityMatch],
    references: Sequence[tuple[str, str, int]],
    plan: str,
    code: str,
    error_message: str,
    answer_format: str,
    dataset_numbers: Sequence[int],
) -> str:
    frames = ", ".join(
        f"dataset {n} as {frame_var(n)}" for n in sorted(dataset_numbers)
    )
    return DEBUG_TEMPLATE.format(
        question=question,
        entities=_entities_block(entities),
        references=_references_block(references),
        plan=plan,
        code=code,
        error_message=error_message,
        answer_format=ANSWER_FORMAT_TOKENS[answer_format],
        frames=frames or "(none)",
    )


JUDGE_TEMPLATE = """\
You are reviewing the output of a data-analysis program. You are given the
program source and the final answer it printed. Report how many rows of data
the program actually used in the final dataset it derived the answer from.

Respond with a single integer between double square brackets, for example
[[120]].

Program:
{code}

Answer:
{answer}

Number of rows used:
"""


def judge_prompt(code: str, answer: str) -> str:
    return JUDGE_TEMPLATE.format(code=code, answer=answer)

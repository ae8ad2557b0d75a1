"""Prompt templates for summary generation and answer generation.

All assembly is byte-deterministic: the same inputs always produce the
same prompt string. The engine targets text-only generators, so the
image slot is omitted and the retrieved section is rendered as a
wiki-style context block.
"""

from __future__ import annotations

from omgm import OmgmError

PROMPT_STYLES = ("evqa", "infoseek", "summary")


class PromptError(OmgmError):
    """Unknown prompt style or missing template inputs."""


SUMMARY_TEMPLATE = """\
You are a Wiki Summary Generator Assistant. Following is some information about you:

## Profile
- name: Wiki Summary Generator Assistant
- language: English
- description: The Wiki Summary Generator Assistant is designed to create concise and informative summaries based on provided Wikipedia content. It extracts key aspects of the entity mentioned in the Wiki article, covering various dimensions such as history, characteristics, significance, appearance and impact.

## Workflows
1. Input the provided Wikipedia content into the system.
2. Identify the main sections and key information related to the entity.
3. Synthesize this information into a well-structured summary.
4. Review and refine the summary for clarity, coherence, and completeness before finalizing.

## Rules
1. Focus on summarizing key details across multiple aspects (e.g., appearance, features, impact) of the entity.
2. Ensure the summary is concise, clear, and free of irrelevant details.
3. Retain the original meaning and context of the Wiki content while rephrasing it into a summary.

Following is the input Wikipedia content:

{content}

Based on the above Wikipedia content, I would like you to generate a summary of the Wikipedia content.
Here is the summary of the Wikipedia content:"""


EVQA_TEMPLATE = """\
You are a helpful assistant for answering encyclopedic questions.
If the context does not contain the information required to answer the question, you should answer the question using internal model knowledge.

- Context: {context}
- Question: {question}
The answer is:"""


INFOSEEK_ONE_SHOT = """\
- Context: # Wiki Article: Dolomites
## Section Title: Dolomites
The Dolomites, also known as the Dolomite Mountains, Dolomite Alps or Dolomitic Alps, are a mountain range located in northeastern Italy. The Dolomites are located in the regions of Veneto, Trentino-Alto Adige/Südtirol and Friuli Venezia Giulia, covering an area shared between the provinces of Belluno, Vicenza, Verona, Trentino, South Tyrol, Udine and Pordenone.
- Question: Which city or region does this mountain locate in?
Just answer the questions , no explanations needed. Short answer is: Province of Belluno"""


INFOSEEK_TEMPLATE = """\
You are a helpful assistant for answering encyclopedic questions. Do not answer anything else.
If you need to answer questions about numbers or time, please output the corresponding numerical format directly. If the context does not contain the information required to answer the question, you should answer the question using internal model knowledge.
There is an example:
""" + INFOSEEK_ONE_SHOT + """

- Context: {context}
- Question: {question}
Just answer the questions , no explanations needed. Short answer is:"""


def format_context_block(title: str, heading: str, body: str) -> str:
    """Render a retrieved section as a wiki-style context block."""
    section_title = heading if heading else title
    return f"# Wiki Article: {title}\n## Section Title: {section_title}\n{body}"


def render_summary_prompt(article_text: str) -> str:
    if not article_text:
        raise PromptError("summary prompt needs non-empty article text")
    return SUMMARY_TEMPLATE.format(content=article_text)


def render_answer_prompt(context_block: str, question: str, style: str) -> str:
    if style == "evqa":
        return EVQA_TEMPLATE.format(context=context_block, question=question)
    if style == "infoseek":
        return INFOSEEK_TEMPLATE.format(context=context_block, question=question)
    if style == "summary":
        return render_summary_prompt(context_block)
    raise PromptError(f"unknown prompt style {style!r} (expected one of {PROMPT_STYLES})")

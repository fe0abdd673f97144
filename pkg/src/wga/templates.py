"""Prompt templates bundled with the agent.

The data-construction prompts (system/tool-call, evaluation, judge,
prompt-generation, recaption, summary) are kept verbatim because judge and
teacher replies are parsed against the formats they request.  The think and
follow-up templates are this package's own.

``SYSTEM_PROMPT``, ``JUDGE_QUESTION`` and ``SUMMARY_PROMPT`` are
``str.format`` templates; the others are literal text.
"""
from __future__ import annotations

import json

SUMMARY_CONTENT_CHARS = 2000

SYSTEM_PROMPT = """\
You are helping to build a high-quality visual generation dataset.
Your task is to gather information and reference images for creating detailed image descriptions.

Your Goal: Create a detailed recaption for "{image_prompt}"
about the IP "{ip_name}" ({country}).

Natural Workflow (think step by step):
1. First, search for background information about this IP/character to understand who they are, their characteristics, style, and context. This knowledge will help you craft more accurate image search queries.
2. Then, search for reference images of this IP/character. Good reference visuals are essential for the final detailed description.
3. Finally, I will provide you with the downloaded reference images, and you will generate a detailed <recaption> that references "image_1" and "image_2" specifically.

Tool Call Format (IMPORTANT - use ONLY this format):
<tool_call>
{{"name": "tool_name", "arguments": {{"param1": "value1"}}}}
</tool_call>
Examples:
- Text search: <tool_call>{{"name": "text_search", "arguments":
  {{"q": "search query", "hl": "zh", "top_k": 5}}}}</tool_call>
- Image search: <tool_call>{{"name": "search_image", "arguments":
  {{"q": "image query", "hl": "zh", "num": 8}}}}</tool_call>
"""


EVALUATION_PROMPT = """\
You are an image evaluation assistant. Compare AS (assistant-generated image) against GT1 and GT2 (ground-truth images) given the Prompt.

Your task is to return exactly 6 fields: 5 integer scores (0-10) and 1 rationale string.

Evaluate these 5 dimensions independently:

1. "clarity": image sharpness, absence of blur/artifacts/noise, and richness of visible details.
2. "content_quality": faithfulness to the Prompt, subject completeness, and semantic coherence.
3. "aesthetics": visual appeal, composition, lighting/color harmony, and style consistency.
4. "text_relevance_ip": IP identity consistency. This means whether AS preserves the same character/object/IP identity as GT1/GT2 based on distinctive traits (e.g. face, hairstyle, costume, colors, species/object-defining features). Do NOT require exact matching of pose, background, camera angle, or composition.

Important instructions:
- Use GT1 and GT2 jointly to infer the stable identity and attributes of the IP.
- Do not penalize AS for differences that also vary between GT1 and GT2.
- Score each dimension independently before assigning the overall score.
- All five score fields must be integers from 0 to 10.
- "rationale" must be a single short string with at least two concrete evidence points, separated by semicolons.

You MUST respond with ONLY this exact JSON structure, with all 6 keys present and no extra keys:

{"clarity": 7, "content_quality": 8, "aesthetics": 7,
 "text_relevance_ip": 8,
 "rationale": "Evidence 1; Evidence 2"}

Do not use markdown fences.
Do not output any text before or after the JSON.
If uncertain, still output the best-effort JSON with all required keys.
"""


JUDGE_PROMPT = """\
You are an expert Image Quality Assessor for an AI training
pipeline. Your task is to evaluate whether a downloaded image
is a high-quality visual reference for a specific Intellectual
Property (IP).

You must rate the image on a scale of 0 to 10 based on the
following strict rubrics:

### 1. IP Consistency (Critical)
- Pass: The image clearly depicts the specific character/object requested.
- Fail (Score 0): The image shows a completely different character, a landscape, a real person (cosplay) if the IP is anime, or an unrelated object.

### 2. Layout & Composition
- Subject-Centric: The IP subject must be the main focus.
- Face Visibility: For characters, the face must be clearly visible (preferably front-facing or 3/4 view). REJECT if the face is tiny, distant, or back-facing.
- No Text-Heavy: REJECT images that are primarily movie posters with large text overlays, book covers, or infographics where the subject is obscured by text.
- No Collages: REJECT split-screens, manga panels, or multiple images stitched together. Single-scene images only.

### 3. Visual Quality
- Clarity: The image must be sharp. REJECT if it is
  severely blurry, pixelated, or has heavy jpeg compression
  artifacts.

### 4. Watermarks & Obstructions
- Reject: Large, obstructive watermarks covering the face or main body (e.g., full-screen stock photo watermarks).
- Accept: Small, unobtrusive logos in the corner are acceptable but lower the score slightly.

### Scoring Guide:
- 0: Wrong IP or completely unusable.
- 1-5 (Reject): Correct IP but violates a major rule (Blurry, Huge Watermark, Text-Heavy, Collage, Tiny Face).
- 6-7 (Borderline): Usable but not ideal (Side profile, small corner watermark, medium resolution).
- 8-10 (Excellent): Perfect reference (High-res, clear front-facing, no text, clean).
"""


JUDGE_QUESTION = """\
Please evaluate the provided image for the IP: "{ip_name}".

Assess the image based on the system rubrics.
Return your response in JSON format ONLY with the following
structure:
{{
    "score": <int, 0-10>,
    "reason": "<string, a concise explanation of the score,
    mentioning any specific flaws like 'text-heavy',
    'watermark', or 'blurry'>",
    "is_text_heavy": <bool>,
    "has_watermark": <bool>
}}
"""


PROMPT_GENERATION_PROMPT = """\
You are a specialized Image Generation Prompt Expert. Your
mission is to generate a single, high-quality image generation
prompt based on a specific IP (person/character). You must
describe "Who is doing What in Which scene."

## 1. Core Logic & Language Rules (CRITICAL)

Step 1: Determine the IP's Nationality
* Case A: If the IP is Chinese (Mainland, Hong Kong, Taiwan,
  Macau):
    * Prompt Language: Must be Chinese.
    * Tag Language: Must be Chinese.
    * Language Code: `zh`
* Case B: If the IP is NOT Chinese (USA, UK, Japan, Korea,
  Europe, etc.):
    * Prompt Language: Must be English.
    * Tag Language: Must be English.
    * Language Code: `en`

## 2. Prompt Construction Requirements

1.  Content Elements:
    * Subject: The IP's name (and brief identity if needed for context).
    * Scene: A specific, realistic location fitting the IP's profession (e.g., Office, Studio, Stadium, Stage, Cafe, Street).
    * Action: A dynamic verb describing what they are doing (e.g., Interviewing, Singing, coding, running, drinking coffee).
2.  Realism Constraint:
    * The scene and action must align with the IP's public persona or profession.
    * Do not hallucinate impossible scenarios unless the IP is a fictional fantasy character.
3.  Syntactic Diversity (Avoid Repetition):
    * Do not always use the structure "Name is doing X in Y".
    * Vary your sentence structures:
        * *Scene-first*: "In the [Scene], [Name] is [Action]..."
        * *Action-focused*: "[Name] is [Action] while located
          in [Scene]..."
        * *Descriptive*: "Surrounded by [Context], [Name] is
          [Action]..."

## 3. Output Format

You must output ONLY the XML tags below. Do not output markdown code blocks (like ```xml), explanations, or conversational filler.

<Image_Prompt>The full descriptive sentence</Image_Prompt>
<Tag_Name>Category of the action (e.g., Interview, Speech,
Daily Life)</Tag_Name>
<Language>zh OR en</Language>

*Note on <Tag_Name>*: If Language is `zh`, the tag must be Chinese. If Language is `en`, the tag must be English (e.g., "Hosting", "Street Snap").

REMEMBER: Output ONLY the three XML tags above, nothing else.

## 4. Examples

Input: Robert Downey Jr. (American Actor)
Output:
<Image_Prompt>Sitting in a relaxed pose on a Hollywood talk
show set, Robert Downey Jr. is laughing while telling a
story</Image_Prompt>
<Tag_Name>Interview</Tag_Name>
<Language>en</Language>

Input: Gordon Ramsay (British Chef)
Output:
<Image_Prompt>Gordon Ramsay is carefully plating a gourmet dish
in a busy high-end restaurant kitchen</Image_Prompt>
<Tag_Name>Cooking</Tag_Name>
<Language>en</Language>
"""


RECAPTION_PROMPT = """\
You are a professional visual language reasoning assistant.
Your task is to generate a reasoning process and a final
detailed image description based on two reference images
(image_1, image_2), the original instruction, and text
search results.

Input Information
1. Reference Images: Explicitly labeled Reference Image 1 (refer to as image_1) and Reference Image 2 (refer to as image_2).
2. Original Instruction: The user's short request.
3. Background Info: Text information from previous search steps.

Output Format
Strictly follow XML format:
<think>
[Deep reasoning here:
 1. Analyze visual features of image_1 and image_2.
 2. Combine with background info to plan the fusion.
 3. Explicitly state what comes from image_1 and what comes
    from image_2.]
</think>
<recaption>
[The final detailed image description, including
"Scene Description" and "Preservation Statement"]
</recaption>

Core Rules & Constraints
1. Reference Principle: You MUST strictly use "image_1" and "image_2" to refer to the images. DO NOT use vague terms like "the first image" or "reference picture".

2. Descriptive Style: The content of <Instruction> must be a description of the final result (Descriptive), NOT an editing command (Imperative).
   - BAD: "Please put the man from image_1 on the left..."
   - GOOD: "In this realistic outdoor portrait, the man from image_1 stands on the left..."

3. Preservation Statement: At the end of the description, you MUST explicitly state what specifically is preserved from image_1 and image_2.
   - Must include phrases like: "The final image completely preserves [features] from image_1..." and "The final image fully retains [features] from image_2...".
   - Facial Features Preservation (CRITICAL): If image_1 and/or image_2 contain identifiable persons, you MUST preserve their exact facial features as shown in the reference images. Include detailed descriptions such as: 
   face shape, eyebrow shape, eye characteristics, facial  expression, skin tone/complexion, hairstyle, and any distinctive facial features. Use the format: "Preserve the exact facial features of [person name/description] as shown in image_1 and image_2: [detailed facial feature description]. Maintain [their/his/her] [appearance/clothing/style] as referenced in both images."

4. Language Consistency (MANDATORY): The content of <recaption> MUST be written entirely in the SAME language as the original instruction. If the original instruction is in Chinese, ALL descriptions in <recaption> must be in Chinese - NO English allowed. If the original instruction is in English, use English throughout. NEVER mix languages within the same description.

Start the task. Output <think> and <recaption>.
"""


SUMMARY_PROMPT = """\
Based on the following webpage content, provide a concise summary that is relevant to the query: "{query}"

Webpage Title: {title}
Content:
{content}

Please provide a focused summary (2-3 sentences maximum) that directly addresses the query. Focus on the most relevant information.

You MUST format your response using the following structure:
<think>
[Your thinking process about what information is most relevant to the query]
</think>

<response>
[Your concise summary here - 2-3 sentences maximum]
</response>
"""


TOOLS_DEFINITION = [
    {
        "type": "function",
        "function": {
            "name": "text_search",
            "description": "Search the web for text information about a query. Use this to get background "
            "information about IPs, people, places, or topics.",
            "parameters": {
                "type": "object",
                "properties": {
                    "q": {"type": "string", "description": "Search query"},
                    "hl": {"type": "string", "description": "Language code (e.g., 'en', 'zh')", "default": "en"},
                    "top_k": {"type": "integer", "description": "Number of results to return", "default": 5},
                },
                "required": ["q"],
            },
        },
    },
    {
        "type": "function",
        "function": {
            "name": "search_image",
            "description": "Search for images on the web. Use this to find relevant images about the IP or topic.",
            "parameters": {
                "type": "object",
                "properties": {
                    "q": {"type": "string", "description": "Search query for images"},
                    "location": {"type": "string", "description": "Location for search", "default": "United States"},
                    "hl": {"type": "string", "description": "Language code", "default": "en"},
                    "num": {"type": "integer", "description": "Number of images to return", "default": 8},
                },
                "required": ["q"],
            },
        },
    },
]


THINK_PROMPT = """\
You are the planning step of a world-grounded image generation agent.
Read the user's image request and decide which visually critical attributes
you cannot render faithfully from memory alone (for example facial structure,
hairstyle, signature outfit, object-defining structure, or scene-specific
factual details).

Output <think> with your analysis, then <response> listing one missing
attribute per line, each line starting with "- ".  Leave <response> empty if
nothing is missing and the request can be drawn directly.
"""

THINK_USER = "Image request: {prompt}"

TEXT_RESEARCH_USER = """\
Image request: {prompt}
Missing attributes:
{missing}

Issue exactly one text_search tool call to gather background information."""

VISUAL_RESEARCH_USER = """\
Text search results for "{query}":
{evidence}

Now search for reference images. Issue exactly one search_image tool call."""

RECAPTION_USER = """\
Original Instruction: {prompt}

Background Info:
{background}

Reference images attached: {references}"""

DIRECT_RECAPTION_NOTE = "No external evidence was gathered; rewrite the instruction as a detailed description."

EVALUATION_USER = "Prompt: {prompt}\nImages attached in order: GT1, GT2, AS."


def render_system_prompt(image_prompt: str, ip_name: str, country: str) -> str:
    return SYSTEM_PROMPT.format(image_prompt=image_prompt, ip_name=ip_name, country=country)


def render_judge_question(ip_name: str) -> str:
    return JUDGE_QUESTION.format(ip_name=ip_name)


def render_summary_prompt(query: str, title: str, content: str) -> str:
    return SUMMARY_PROMPT.format(query=query, title=title, content=content[:SUMMARY_CONTENT_CHARS])


def render_tools_definition() -> str:
    return "tools = " + json.dumps(TOOLS_DEFINITION, indent=4, ensure_ascii=False)


def format_evidence(hits) -> str:
    if not hits:
        return "(no results)"
    lines = []
    for i, h in enumerate(hits, start=1):
        text = h.summary if h.summary else h.snippet
        lines.append(f"[{i}] {h.title} ({h.url})\n{text}")
    return "\n".join(lines)

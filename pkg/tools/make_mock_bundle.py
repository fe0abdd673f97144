"""Regenerate the scripted mock bundle under src/wga/data/mock.

Three prompts: one passes verification on the first trial, one on the third,
one never passes and is discarded after five.  Candidate-judge rules are keyed
by image content hash so concurrent judging cannot change which rule fires.
"""
from __future__ import annotations

import hashlib
import io
import json
import shutil
from pathlib import Path

from PIL import Image, ImageDraw

OUT = Path(__file__).resolve().parents[1] / "src" / "wga" / "data" / "mock"

THINK = "planning step of a world-grounded"
TEXT = "Issue exactly one text_search"
VISUAL = "Issue exactly one search_image"
SUMMARY = "provide a concise summary that is relevant"
RECAP = "professional visual language reasoning assistant"
EVAL = "image evaluation assistant"
JUDGE = "expert Image Quality Assessor"

PROMPTS = [
    {
        "id": "mascot-001",
        "text": "Bolt the Otter, mascot of the Lakeside Games, waving a relay torch on a pier at dawn",
        "language": "en",
        "category": "Mascot",
        "ip_name": "Bolt the Otter",
        "country": "Canada",
        "units": ["fur colour and markings of Bolt the Otter", "design of the Lakeside Games torch"],
        "text_q": "Bolt the Otter Lakeside Games mascot",
        "image_q": "Bolt the Otter mascot",
        "hits": [
            ("Bolt the Otter - Lakeside Games", "https://games.example.org/mascot",
             "Bolt is a river otter with chestnut fur and a cream belly.",
             "Bolt is a river otter with chestnut fur, a cream belly and a blue scarf. He carries the "
             "copper relay torch introduced for the Lakeside Games."),
            ("Mascot design notes", "https://design.example.org/bolt",
             "The mascot wears a blue scarf with wave stripes.",
             "Designers gave Bolt a blue scarf with three white wave stripes and round amber eyes."),
        ],
        "images": [("bolt_a", (176, 96, 48), 9, False, False), ("bolt_b", (170, 100, 60), 8, False, False),
                   ("bolt_c", (160, 90, 50), 8, False, True), ("bolt_d", (40, 120, 40), 0, False, False)],
        "broken_image": True,
        "recaption": ("image_1 shows the chestnut otter front-facing; image_2 confirms the scarf stripes.",
                      "At dawn on a wooden pier, Bolt the Otter from image_1 raises a copper relay torch while "
                      "waving with his free paw. His blue scarf with three white wave stripes matches image_2. "
                      "The final image completely preserves the chestnut fur, cream belly and amber eyes from "
                      "image_1. The final image fully retains the striped blue scarf from image_2."),
        "eval": [(None, 8)],
    },
    {
        "id": "landmark-001",
        "text": "The Old Mill Bridge in Hartwell at sunset with lanterns along the railings",
        "language": "en",
        "category": "Landmark",
        "ip_name": "Old Mill Bridge",
        "country": "United Kingdom",
        "units": ["arch count and stone colour of the Old Mill Bridge"],
        "text_q": "Old Mill Bridge Hartwell architecture",
        "image_q": "Old Mill Bridge Hartwell",
        "hits": [
            ("Old Mill Bridge", "https://heritage.example.org/old-mill-bridge",
             "A three-arch sandstone bridge built in 1792.",
             "The Old Mill Bridge is a three-arch honey sandstone bridge built in 1792 beside the "
             "restored water mill."),
        ],
        "images": [("mill_a", (200, 170, 110), 7, False, False), ("mill_b", (190, 160, 120), 5, False, True),
                   ("mill_c", (210, 180, 100), 9, False, False)],
        "broken_image": False,
        "recaption": ("image_1 gives the arch geometry; image_2 gives the stone tone at low sun.",
                      "A three-arch honey sandstone bridge from image_1 spans a calm river at sunset, lanterns "
                      "glowing along its railings and the water mill visible beside it. The final image "
                      "completely preserves the arch proportions from image_1. The final image fully retains "
                      "the warm stone colour from image_2."),
        "eval": [(2, 4), (None, 7)],
    },
    {
        "id": "toy-001",
        "text": "A Mossling series three chase figure standing on a cluttered study desk",
        "language": "en",
        "category": "Toy",
        "ip_name": "Mossling",
        "country": "Japan",
        "units": ["shape and colours of the Mossling series three chase figure"],
        "text_q": "Mossling series 3 chase figure",
        "image_q": "Mossling series 3 chase",
        "hits": [
            ("Mossling collectors wiki", "https://wiki.example.org/mossling",
             "Series three chase figures are translucent green.",
             "Mossling series three chase figures are cast in translucent green vinyl with a moss-textured cap."),
        ],
        "images": [("moss_a", (90, 160, 90), 8, False, False), ("moss_b", (80, 150, 100), 4, True, False)],
        "broken_image": False,
        "recaption": ("image_1 shows the translucent vinyl and cap texture.",
                      "A small translucent green vinyl figure from image_1 with a moss-textured cap stands on a "
                      "cluttered study desk among pencils and notebooks. The final image completely preserves "
                      "the cap texture and translucent body from image_1."),
        "eval": [(None, 3)],
    },
]


def png(color, size=(64, 48), mark=0) -> bytes:
    im = Image.new("RGB", size, color)
    d = ImageDraw.Draw(im)
    d.rectangle([8 + mark, 8, 30 + mark, 30], fill=tuple(255 - c for c in color))
    buf = io.BytesIO()
    im.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def handle(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


def jl(rows) -> str:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows)


def slug(s: str) -> str:
    return "_".join("".join(c if c.isalnum() else " " for c in s.casefold()).split())


def main():
    if OUT.exists():
        shutil.rmtree(OUT)
    (OUT / "search").mkdir(parents=True)
    (OUT / "images").mkdir()

    chat_think, chat_visual, chat_text, chat_summary, chat_recap = [], [], [], [], []
    judge_eval, judge_cand = [], []
    prompts = []

    for pi, p in enumerate(PROMPTS):
        key = p["text"]
        units = "\n".join(f"- {u}" for u in p["units"])
        chat_think.append({"match": [THINK, key],
                           "response": f"<think>The request needs details I cannot recall reliably.</think>\n"
                                       f"<response>\n{units}\n</response>"})
        chat_visual.append({"match": [VISUAL, key],
                            "response": "<think>Look for clean front-facing references.</think>\n<tool_call>"
                                        + json.dumps({"name": "search_image", "arguments": {"q": p["image_q"]}})
                                        + "</tool_call>"})
        chat_text.append({"match": [TEXT, key],
                          "response": "<think>Start with background facts.</think>\n<tool_call>"
                                      + json.dumps({"name": "text_search", "arguments": {"q": p["text_q"]}})
                                      + "</tool_call>"})
        results = []
        for title, url, snippet, content in p["hits"]:
            results.append({"title": title, "url": url, "snippet": snippet, "content": content})
            chat_summary.append({"match": [SUMMARY, f"Webpage Title: {title}"],
                                 "response": f"<think>Keep the visual facts.</think>\n<response>{content}</response>"})
        with open(OUT / "search" / f"text_{slug(p['text_q'])}.json", "w", encoding="utf-8") as fh:
            json.dump({"query": p["text_q"], "kind": "text", "results": results}, fh, indent=2)

        image_rows = []
        for k, (name, color, score, text_heavy, watermark) in enumerate(p["images"]):
            data = png(color, mark=k)
            (OUT / "images" / f"{name}.png").write_bytes(data)
            image_rows.append({"url": f"fixture://{name}.png", "width": 64, "height": 48})
            reason = "wrong IP" if score == 0 else f"{p['ip_name']} clearly visible"
            judge_cand.append({"match": [JUDGE, f"[image {handle(data)}]"],
                               "response": json.dumps({"score": score, "reason": reason,
                                                       "is_text_heavy": text_heavy, "has_watermark": watermark})})
        if p["broken_image"]:
            image_rows.append({"url": "fixture://missing.png", "width": 64, "height": 48})
        with open(OUT / "search" / f"image_{slug(p['image_q'])}.json", "w", encoding="utf-8") as fh:
            json.dump({"query": p["image_q"], "kind": "image", "results": image_rows}, fh, indent=2)

        think, body = p["recaption"]
        chat_recap.append({"match": [RECAP, f"Original Instruction: {key}"],
                           "response": f"<think>{think}</think>\n<recaption>{body}</recaption>"})

        for times, rel in p["eval"]:
            rule = {"match": [EVAL, f"Prompt: {key}"],
                    "response": json.dumps({"clarity": 8, "content_quality": 7, "aesthetics": 7,
                                            "text_relevance_ip": rel,
                                            "rationale": "identity traits compared with GT1; colours compared with GT2"})}
            if times:
                rule["times"] = times
            judge_eval.append(rule)

        gts = []
        for g in (1, 2):
            name = f"gt_{p['id']}_{g}.png"
            (OUT / "images" / name).write_bytes(png(tuple(min(255, c + 30 * g) for c in p["images"][0][1]),
                                                    size=(48, 64)))
            gts.append(f"images/{name}")
        row = {k: p[k] for k in ("id", "text", "language", "category", "ip_name", "country")}
        row["ground_truth"] = gts
        prompts.append(row)

    (OUT / "chat.jsonl").write_text(
        "// first matching rule wins; visual rules precede text rules because the visual request repeats the text turn\n"
        + jl(chat_think + chat_visual + chat_text + chat_summary + chat_recap), encoding="utf-8")
    (OUT / "judge.jsonl").write_text(
        "// evaluation rules first; candidate rules are keyed by image content hash\n"
        + jl(judge_eval + judge_cand), encoding="utf-8")
    (OUT / "imagegen.jsonl").write_text(
        "// no rules: every request gets a deterministic PNG derived from caption, references and seed\n",
        encoding="utf-8")
    (OUT / "prompts.jsonl").write_text(jl(prompts), encoding="utf-8")

    manifest = []
    for p in PROMPTS:
        manifest.append({"item_id": p["id"], "subcategory": p["category"], "prompt": p["text"],
                         "gt1": f"images/gt_{p['id']}_1.png", "gt2": f"images/gt_{p['id']}_2.png",
                         "generated": f"images/{p['images'][0][0]}.png"})
    (OUT / "eval_manifest.jsonl").write_text(jl(manifest), encoding="utf-8")


if __name__ == "__main__":
    main()

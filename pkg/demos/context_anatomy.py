"""
Anatomy of a generated context
==============================

"""

# load the bundled clinician-written demonstrations and pull one apart
from privqa.promptkit import bundled_demo_path, load_demonstrations

demos = load_demonstrations(bundled_demo_path("medqa"))
demo = demos[0]

print("keywords:", ", ".join(demo.keywords))
print("choices:")
for label, answer in demo.choices.items():
    print(f"  ({label}) {answer}")

# a parsed context has three fields: one overall sentence shared by every
# choice, one specific block per choice whose final sentence states the
# relation, and the model's own preliminary decision
ctx = demo.context
print("\noverall:", ctx.overall)
for label, block in ctx.specific.items():
    print(f"({label}) knowledge: {block.knowledge}")
    print(f"    relation: {block.relation}")
print("decision:", sorted(ctx.decision))

# serialization is the exact inverse of parsing
from privqa.contexts import parse_generation, serialize_context

labels = tuple(demo.choices)
text = serialize_context(ctx, labels)
assert parse_generation(text, labels) == ctx
print("\nround trip ok,", len(text), "chars")

# ablation views drop fields before the scorer ever sees them
from privqa.contexts import ContextView, apply_view

for view in ContextView:
    overall, per_choice = apply_view(ctx, view)
    a = per_choice.get(labels[0], "")
    print(f"{view.value:>13}: overall={overall!r:.40} choice(a)={a!r:.40}")

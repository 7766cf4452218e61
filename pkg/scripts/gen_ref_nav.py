"""Generate one reference page per `recallgym` module, and the navigation."""

from pathlib import Path

import mkdocs_gen_files

nav = mkdocs_gen_files.Nav()
mod_symbol = '<code class="doc-symbol doc-symbol-nav doc-symbol-module"></code>'

root = Path(__file__).parent.parent
package = root / "src" / "recallgym"

for path in sorted(package.glob("*.py")):
    if path.stem == "__main__":
        continue
    ident = "recallgym" if path.stem == "__init__" else f"recallgym.{path.stem}"
    doc_path = Path("recallgym", "index.md" if path.stem == "__init__" else f"{path.stem}.md")
    full_doc_path = Path("reference", doc_path)

    nav_parts = tuple(f"{mod_symbol} {part}" for part in ident.split("."))
    nav[nav_parts] = doc_path.as_posix()

    with mkdocs_gen_files.open(full_doc_path, "w") as fd:
        fd.write(f"---\ntitle: {ident}\n---\n\n::: {ident}")

    mkdocs_gen_files.set_edit_path(full_doc_path, ".." / path.relative_to(root))

with mkdocs_gen_files.open("reference/SUMMARY.md", "w") as nav_file:
    nav_file.writelines(nav.build_literate_nav())

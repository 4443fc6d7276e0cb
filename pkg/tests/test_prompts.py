import pytest

from app.prompts import PLACEHOLDERS, load_template, render, template_digest, template_placeholders


@pytest.mark.parametrize("name", sorted(PLACEHOLDERS))
def test_template_uses_every_placeholder(name):
    """Test each shipped template mentions exactly its declared placeholders"""
    assert template_placeholders(name) == PLACEHOLDERS[name]


def test_render_substitutes_values():
    """Test values land in the text and the placeholders disappear"""
    text = render("refine", options="A. war: conflict\nB. None of them.", trigger="war", sentence="The war ended.")

    assert "The war ended." in text
    assert "A. war: conflict" in text
    assert "{options}" not in text


def test_render_keeps_literal_braces():
    """Test JSON examples in a template survive rendering"""
    text = render("align", event_type="attack", description="d", trigger="attacked", roles="Agent",
                  sentence="s", input="{}")
    assert '{"Agent": ["John", "Sarah"]' in text


def test_render_does_not_expand_values():
    """Test a value that looks like a placeholder is inserted verbatim"""
    text = render("ed", schema="class War(Event):\n    pass", sentence='"{sentence}"')
    assert 'sentence = "{sentence}"' in text


@pytest.mark.parametrize("values", [
    {"sentence": "s"},
    {"sentence": "s", "annotations": "a", "trigger": "t"},
])
def test_render_checks_keys(values):
    """Test missing and unexpected values are both rejected"""
    with pytest.raises(KeyError):
        render("filter", **values)


def test_unknown_template():
    with pytest.raises(KeyError):
        load_template("summarize")


def test_template_digest():
    """Test digests are stable sha256 hex strings that differ per template"""
    digests = {name: template_digest(name) for name in PLACEHOLDERS}

    assert digests == {name: template_digest(name) for name in PLACEHOLDERS}
    assert all(len(d) == 64 and int(d, 16) >= 0 for d in digests.values())
    assert len(set(digests.values())) == len(digests)

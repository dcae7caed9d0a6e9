from __future__ import annotations

import pytest

from webeval.browser import (
    CENSUS_EXPR,
    CONSOLE_ERRORS_EXPR,
    FREEZE_EXPR,
    UNFREEZE_EXPR,
    BrowserError,
    FakeBrowser,
    InputEvent,
)


def test_input_event_validation_and_round_trip():
    with pytest.raises(ValueError, match="unknown input event type"):
        InputEvent(type="hover")
    with pytest.raises(ValueError, match="timings"):
        InputEvent(type="pause", delay_ms=-1.0)
    event = InputEvent(type="pointer_down", x=10.0, y=20.0, delay_ms=45.0,
                       duration_ms=80.0)
    assert InputEvent.from_dict(event.to_dict()) == event


def test_counter_advances_once_per_period():
    browser = FakeBrowser(counter_period_ms=100.0)
    browser.navigate("http://page/")
    assert browser.counter == 0
    browser.tick(99.0)
    assert browser.counter == 0
    browser.tick(1.0)
    assert browser.counter == 1
    browser.tick(250.0)
    assert browser.counter == 3


def test_freeze_holds_the_page_and_resume_is_seamless():
    browser = FakeBrowser(counter_period_ms=100.0)
    browser.navigate("http://page/")
    browser.tick(150.0)  # counter 1, 50ms into the next period
    browser.evaluate(FREEZE_EXPR)
    browser.tick(2000.0)  # a long think phase
    assert browser.counter == 1
    browser.evaluate(UNFREEZE_EXPR)
    # The partial period picks up where it stopped: one period of unfrozen
    # time from here is enough to advance again.
    browser.tick(50.0)
    assert browser.counter == 2


def test_navigate_resets_simulated_time():
    browser = FakeBrowser(fetch=lambda url: f"<html>{url}</html>")
    browser.navigate("http://a/")
    browser.tick(500.0)
    browser.evaluate(FREEZE_EXPR)
    browser.navigate("http://b/")
    assert browser.counter == 0
    assert not browser.frozen
    assert browser.source == "<html>http://b/</html>"


def test_screenshot_embeds_observable_state():
    browser = FakeBrowser()
    browser.navigate("http://page/")
    browser.tick(120.0)
    assert browser.screenshot() == b"PNG|http://page/|counter=1|frozen=False"
    browser.evaluate(FREEZE_EXPR)
    assert browser.screenshot().endswith(b"frozen=True")


def test_evaluate_contract():
    browser = FakeBrowser(extra_evaluate={
        "1 + 1": 2,
        "document.title": lambda b: b.url,
    })
    browser.navigate("http://page/")
    browser.console_errors.append("TypeError: boom")
    assert browser.evaluate(CONSOLE_ERRORS_EXPR) == ["TypeError: boom"]
    assert browser.evaluate(CENSUS_EXPR) == {
        "intervals": 1, "timeouts": 0, "animation_frames": 0,
    }
    assert browser.evaluate("1 + 1") == 2
    assert browser.evaluate("document.title") == "http://page/"
    with pytest.raises(BrowserError):
        browser.evaluate("window.whatever")


def test_dispatch_input_spends_event_time():
    browser = FakeBrowser(counter_period_ms=100.0)
    browser.navigate("http://page/")
    browser.dispatch_input([
        InputEvent(type="pointer_move", x=1.0, y=1.0, delay_ms=60.0),
        InputEvent(type="pointer_down", x=1.0, y=1.0, delay_ms=50.0, duration_ms=100.0),
        InputEvent(type="pointer_up", x=1.0, y=1.0),
    ])
    assert browser.counter == 2
    assert len(browser.events) == 3


def test_closed_browser_raises_everywhere():
    browser = FakeBrowser()
    browser.navigate("http://page/")
    browser.close()
    for call in (
        lambda: browser.navigate("http://other/"),
        lambda: browser.screenshot(),
        lambda: browser.evaluate(FREEZE_EXPR),
        lambda: browser.dispatch_input([]),
        lambda: browser.tick(1.0),
        lambda: browser.add_init_script("x"),
    ):
        with pytest.raises(BrowserError):
            call()

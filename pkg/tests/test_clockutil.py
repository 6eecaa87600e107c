import asyncio
import time

from h3pubsub.clockutil import VirtualTimeLoop, run_virtual


def test_sleep_advances_virtual_clock_without_wall_time():
    async def scenario():
        loop = asyncio.get_running_loop()
        start = loop.time()
        await asyncio.sleep(120.0)
        return loop.time() - start

    wall_start = time.monotonic()
    elapsed = run_virtual(scenario())
    wall = time.monotonic() - wall_start
    assert elapsed >= 120.0
    assert wall < 5.0


def test_timers_fire_in_deadline_order():
    fired = []

    async def scenario():
        loop = asyncio.get_running_loop()
        for delay in (3.0, 1.0, 2.0):
            loop.call_later(delay, fired.append, delay)
        await asyncio.sleep(4.0)

    run_virtual(scenario())
    assert fired == [1.0, 2.0, 3.0]


def test_concurrent_sleepers_interleave_deterministically():
    log = []

    async def ticker(name, period, n):
        for i in range(n):
            await asyncio.sleep(period)
            log.append((asyncio.get_running_loop().time(), name, i))

    async def scenario():
        await asyncio.gather(ticker("a", 0.5, 4), ticker("b", 1.0, 2))

    run_virtual(scenario())
    # Ties at the same deadline resolve by timer insertion order: b's 1.0s
    # timer was scheduled at t=0, before a's second one at t=0.5.
    assert [entry[:2] for entry in log] == [
        (0.5, "a"), (1.0, "b"), (1.0, "a"), (1.5, "a"), (2.0, "b"), (2.0, "a"),
    ]


def test_cancelled_timer_does_not_stall_loop():
    async def scenario():
        loop = asyncio.get_running_loop()
        handle = loop.call_later(1000.0, lambda: None)
        handle.cancel()
        await asyncio.sleep(1.0)
        return loop.time()

    assert run_virtual(scenario()) >= 1.0


def test_loop_time_starts_at_zero():
    loop = VirtualTimeLoop()
    try:
        assert loop.time() == 0.0
    finally:
        loop.close()

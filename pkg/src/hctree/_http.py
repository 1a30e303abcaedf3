from __future__ import annotations

import logging
import time

import httpx

from hctree.errors import ProviderError

log = logging.getLogger(__name__)


def post_json(client: httpx.Client, url: str, payload: dict, *, headers=None,
              attempts: int = 3, backoff: float = 0.5, sleep=time.sleep) -> dict:
    """POST ``payload`` and decode the JSON reply.

    Transport errors and 5xx responses are retried with exponential backoff
    (``backoff``, ``2*backoff``, ...). Anything else fails immediately.
    """
    last = None
    for attempt in range(1, attempts + 1):
        try:
            resp = client.post(url, json=payload, headers=headers)
        except httpx.TransportError as exc:
            last = f"{type(exc).__name__}: {exc}"
        else:
            if resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
            elif resp.status_code >= 400:
                raise ProviderError(f"{url} returned HTTP {resp.status_code}: {resp.text[:200]}",
                                    attempts=attempt)
            else:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise ProviderError(f"{url} returned invalid JSON", attempts=attempt) from exc
        if attempt < attempts:
            delay = backoff * 2 ** (attempt - 1)
            log.warning("request to %s failed (%s); retry %d/%d in %.2fs",
                        url, last, attempt, attempts - 1, delay)
            sleep(delay)
    raise ProviderError(f"{url} unreachable after {attempts} attempts: {last}", attempts=attempts)

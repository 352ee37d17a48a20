"""
Test cases for pretrained weight download and caching.
"""
import hashlib
from contextlib import contextmanager

import httpx
import pytest
import torch

from src.services.error_handler import NotFoundError, WeightsChecksumError, WeightsError, WeightsNetworkError
from src.services.weights_service import expected_digest_prefix, fetch_weights, load_state_dict, verify_digest

PAYLOAD = b'pretend these are weights'
PREFIX = hashlib.sha256(PAYLOAD).hexdigest()[:8]
URL = f"https://download.example.org/models/net-{PREFIX}.pth"


class FakeResponse:
    def __init__(self, body: bytes):
        self.body = body

    def raise_for_status(self):
        return None

    def iter_bytes(self):
        yield self.body[:5]
        yield self.body[5:]


def fake_stream(body: bytes, calls: list):
    @contextmanager
    def stream(method, url, **kwargs):
        calls.append(url)
        yield FakeResponse(body)

    return stream


class TestDigest:
    """Test checksum handling."""

    def test_prefix_from_torchvision_name(self):
        """Test the hash prefix is read from the file name."""
        assert expected_digest_prefix('https://x/inception_v3_google-0cc3c7bd.pth') == '0cc3c7bd'
        assert expected_digest_prefix('https://x/weights.pth') is None

    def test_mismatch(self, tmp_path):
        """Test a file that does not match its digest."""
        path = tmp_path / 'w.pth'
        path.write_bytes(b'other bytes')
        with pytest.raises(WeightsChecksumError):
            verify_digest(path, PREFIX)


class TestFetchWeights:
    """Test the download cache."""

    def test_download_then_cache_hit(self, tmp_path, monkeypatch):
        """Test the second fetch does not touch the network."""
        calls = []
        monkeypatch.setattr(httpx, 'stream', fake_stream(PAYLOAD, calls))

        first = fetch_weights(URL, tmp_path)
        second = fetch_weights(URL, tmp_path)

        assert first == second
        assert first.read_bytes() == PAYLOAD
        assert calls == [URL]
        assert not list(tmp_path.glob('*.part'))

    def test_corrupt_download_is_discarded(self, tmp_path, monkeypatch):
        """Test a payload with the wrong digest leaves nothing behind."""
        monkeypatch.setattr(httpx, 'stream', fake_stream(b'tampered', []))

        with pytest.raises(WeightsChecksumError):
            fetch_weights(URL, tmp_path)
        assert list(tmp_path.iterdir()) == []

    def test_network_failure(self, tmp_path, monkeypatch):
        """Test connection errors surface as WeightsNetworkError."""
        def refuse(method, url, **kwargs):
            raise httpx.ConnectError('connection refused')

        monkeypatch.setattr(httpx, 'stream', refuse)

        with pytest.raises(WeightsNetworkError):
            fetch_weights(URL, tmp_path)
        assert list(tmp_path.iterdir()) == []


class TestLoadStateDict:
    """Test reading weight files."""

    def test_plain_and_wrapped(self, tmp_path):
        """Test bare state dicts and {'state_dict': ...} wrappers."""
        state = {'layer.weight': torch.ones(2, 2)}
        torch.save(state, tmp_path / 'plain.pt')
        torch.save({'state_dict': state}, tmp_path / 'wrapped.pt')

        for name in ('plain.pt', 'wrapped.pt'):
            loaded = load_state_dict(tmp_path / name)
            assert torch.equal(loaded['layer.weight'], state['layer.weight'])

    def test_missing(self, tmp_path):
        """Test a path that does not exist."""
        with pytest.raises(NotFoundError):
            load_state_dict(tmp_path / 'absent.pt')

    def test_garbage(self, tmp_path):
        """Test unreadable bytes."""
        (tmp_path / 'bad.pt').write_bytes(b'not a pickle')
        with pytest.raises(WeightsError):
            load_state_dict(tmp_path / 'bad.pt')

import time

from src.services.cache_service import CacheService, DensityCache


def test_memory_cache_roundtrip_and_expiry(monkeypatch):
    cache = CacheService(redis_url=None)
    assert cache.set('density:a', {'x': 1}, ttl_seconds=10)
    assert cache.get('density:a') == {'x': 1}
    assert cache.get('density:missing') is None

    now = time.time()
    monkeypatch.setattr(time, 'time', lambda: now + 11)
    assert cache.get('density:a') is None
    assert cache.get_cache_stats() == {'type': 'memory', 'total_keys': 0}


def test_delete_and_clear():
    cache = CacheService(redis_url=None)
    cache.set('density:a', 1)
    cache.set('density:b', 2)
    cache.delete('density:a')
    assert cache.get('density:a') is None
    assert cache.clear() == 1
    assert cache.get_cache_stats()['total_keys'] == 0


def test_unreachable_redis_falls_back_to_memory():
    cache = CacheService(redis_url='redis://127.0.0.1:1/0')
    assert not cache.redis_available
    assert cache.set('density:k', [1.0, 2.0])
    assert cache.get('density:k') == [1.0, 2.0]


def test_density_keys_ignore_dict_order():
    densities = DensityCache(CacheService(redis_url=None))
    first = densities.key_for({'cells': 16, 'sigma': 0.1})
    second = densities.key_for({'sigma': 0.1, 'cells': 16})
    assert first == second
    assert first.startswith('density:')
    assert densities.key_for({'cells': 32, 'sigma': 0.1}) != first


def test_density_trajectory_roundtrip():
    densities = DensityCache(CacheService(redis_url=None), ttl_seconds=60)
    payload = {'cells': 4}
    assert densities.get_trajectory(payload) is None
    densities.cache_trajectory(payload, [0.0, 0.1], [[1.0] * 4, [1.0] * 4], 1.0)
    record = densities.get_trajectory(payload)
    assert record['times'] == [0.0, 0.1]
    assert record['max_sup'] == 1.0


def test_set_prunes_expired_memory_entries(monkeypatch):
    cache = CacheService(redis_url=None)
    now = time.time()
    monkeypatch.setattr(time, 'time', lambda: now)
    for k in range(5):
        cache.set(f'density:old{k}', k, ttl_seconds=10)
    cache.set('density:long', 'kept', ttl_seconds=1000)

    monkeypatch.setattr(time, 'time', lambda: now + 11)
    cache.set('density:new', 'fresh', ttl_seconds=10)
    # Expired keys are gone without ever being read
    assert sorted(cache.memory_cache) == ['density:long', 'density:new']
    assert cache.get_cache_stats()['total_keys'] == 2
    assert cache.get('density:long') == 'kept'

"""
Cache Service
Caches solved PDE trajectories so repeated experiments on one PdeConfig reuse the solve.
Redis when REDIS_URL is configured, in-memory with TTL expiry otherwise.
"""

import hashlib
import json
import logging
import time
from typing import Any, Dict, List, Optional

import redis

from src.config import Config

logger = logging.getLogger(__name__)


class CacheService:
    """Key/value cache with TTL, JSON-serialised values"""

    def __init__(self, redis_url: Optional[str] = Config.REDIS_URL):
        self.redis_available = False
        self.memory_cache: Dict[str, Dict] = {}

        if redis_url:
            try:
                self.redis_client = redis.from_url(redis_url, decode_responses=True)
                # Test connection
                self.redis_client.ping()
                self.redis_available = True
                logger.info("✅ Redis density cache connected")
            except Exception as e:
                logger.warning(f"⚠️  Redis not available, using in-memory cache: {str(e)}")

    def _generate_key(self, prefix: str, identifier: str, **kwargs) -> str:
        """Generate a consistent cache key"""
        key_parts = [prefix, identifier]
        if kwargs:
            sorted_params = sorted(kwargs.items())
            key_parts.append("_".join([f"{k}:{v}" for k, v in sorted_params]))
        return ":".join(key_parts)

    def _is_expired(self, timestamp: float, ttl_seconds: int) -> bool:
        return time.time() - timestamp > ttl_seconds

    def _prune_expired(self) -> int:
        """Drop expired in-memory entries; returns how many were removed"""
        expired = [k for k, data in self.memory_cache.items() if self._is_expired(data['timestamp'], data['ttl'])]
        for k in expired:
            del self.memory_cache[k]
        if expired:
            logger.debug(f"Pruned {len(expired)} expired cache entries")
        return len(expired)

    def set(self, key: str, value: Any, ttl_seconds: int = Config.DENSITY_CACHE_TTL) -> bool:
        try:
            cache_data = {'value': value, 'timestamp': time.time(), 'ttl': ttl_seconds}
            if self.redis_available:
                self.redis_client.setex(key, ttl_seconds, json.dumps(cache_data))
            else:
                self._prune_expired()
                self.memory_cache[key] = cache_data
            return True
        except Exception as e:
            logger.warning(f"Cache set error: {str(e)}")
            return False

    def get(self, key: str) -> Optional[Any]:
        """Value for key, or None when missing or expired"""
        try:
            if self.redis_available:
                cached_data = self.redis_client.get(key)
                if cached_data:
                    return json.loads(cached_data)['value']
                return None

            cached_data = self.memory_cache.get(key)
            if cached_data is None:
                return None
            if self._is_expired(cached_data['timestamp'], cached_data['ttl']):
                del self.memory_cache[key]
                return None
            return cached_data['value']
        except Exception as e:
            logger.warning(f"Cache get error: {str(e)}")
            return None

    def delete(self, key: str) -> bool:
        try:
            if self.redis_available:
                self.redis_client.delete(key)
            else:
                self.memory_cache.pop(key, None)
            return True
        except Exception as e:
            logger.warning(f"Cache delete error: {str(e)}")
            return False

    def clear(self) -> int:
        """Drop every density entry"""
        if self.redis_available:
            keys = self.redis_client.keys('density:*')
            return self.redis_client.delete(*keys) if keys else 0
        cleared = len(self.memory_cache)
        self.memory_cache.clear()
        return cleared

    def get_cache_stats(self) -> Dict:
        if self.redis_available:
            return {'type': 'redis', 'total_keys': self.redis_client.dbsize()}
        return {'type': 'memory', 'total_keys': len(self.memory_cache)}


class DensityCache:
    """PDE trajectories keyed by an md5 hash of the canonical PdeConfig JSON"""

    def __init__(self, cache: CacheService, ttl_seconds: int = Config.DENSITY_CACHE_TTL):
        self.cache = cache
        self.ttl_seconds = ttl_seconds

    def key_for(self, payload: Dict) -> str:
        params_str = json.dumps(payload, sort_keys=True)
        params_hash = hashlib.md5(params_str.encode()).hexdigest()
        return self.cache._generate_key('density', params_hash)

    def get_trajectory(self, payload: Dict) -> Optional[Dict]:
        return self.cache.get(self.key_for(payload))

    def cache_trajectory(self, payload: Dict, times: List[float], values: List, max_sup: float) -> bool:
        record = {'times': times, 'values': values, 'max_sup': max_sup}
        return self.cache.set(self.key_for(payload), record, self.ttl_seconds)


# Create singleton instances
cache_service = CacheService()

# Global instance for use across the application
density_cache = DensityCache(cache_service)

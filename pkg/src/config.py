import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

class Config:
    """Base configuration"""
    # Parallelism for replicas and experiment rows; results never depend on it
    WORKERS = int(os.getenv('SIM_WORKERS', '1'))
    OUTPUT_DIR = os.getenv('SIM_OUTPUT_DIR', os.path.join(os.getcwd(), 'runs'))
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')

    # Density cache - Redis when REDIS_URL is set, in-memory otherwise
    REDIS_URL = os.getenv('REDIS_URL')
    DENSITY_CACHE_TTL = int(os.getenv('DENSITY_CACHE_TTL', '3600'))

    # Numerical tolerances (boundary tolerance is relative to the domain diameter)
    BOUNDARY_TOL = 1e-9
    PROJECTION_TOL = 1e-12
    PROJECTION_MAX_ITER = 10_000
    REJECTION_MAX_PROPOSALS = 1_000_000

    # Mollifier quadrature nodes per axis
    QUADRATURE_NODES = int(os.getenv('QUADRATURE_NODES', '9'))

    # Rows of query points evaluated together in pairwise velocity sums
    VELOCITY_CHUNK = int(os.getenv('VELOCITY_CHUNK', '256'))

class DevelopmentConfig(Config):
    """Development configuration"""
    DEBUG = True
    TESTING = False
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'DEBUG')

class ProductionConfig(Config):
    """Production configuration"""
    DEBUG = False
    TESTING = False

    # Long experiment batches must write somewhere explicit
    output_dir = os.getenv('SIM_OUTPUT_DIR')
    if output_dir:
        OUTPUT_DIR = output_dir
    elif os.getenv('SIM_ENV') == 'production':
        raise ValueError("SIM_OUTPUT_DIR is required for production")

class TestingConfig(Config):
    """Testing configuration"""
    DEBUG = True
    TESTING = True
    WORKERS = 1
    LOG_LEVEL = 'WARNING'
    REDIS_URL = None

# Configuration dictionary
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}

def get_config(config_name=None):
    """Resolve the active configuration class from SIM_ENV"""
    config_name = config_name or os.getenv('SIM_ENV', 'default')
    return config.get(config_name, config['default'])

import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

class Config:
    # Storage Configuration
    DATA_DIR = os.getenv("DRIVER_TELEMETRY_DATA", "./data")

    # Discovery Configuration
    REGISTRY_HOST = os.getenv("DRIVEMON_REGISTRY_HOST", "127.0.0.1")
    REGISTRY_PORT = int(os.getenv("DRIVEMON_REGISTRY_PORT", "8070"))
    REGISTRY_TTL_S = float(os.getenv("DRIVEMON_REGISTRY_TTL_S", "300"))
    GAME_NAME = os.getenv("DRIVEMON_GAME_NAME", "com.ak.shimmer")
    SIMULATOR_NAME = os.getenv("DRIVEMON_SIMULATOR_NAME", "com.ak.shimmer.sim")

    # Session Configuration
    MONITOR_PORT = int(os.getenv("DRIVEMON_MONITOR_PORT", "8080"))
    SOCKET_TIMEOUT_S = float(os.getenv("DRIVEMON_SOCKET_TIMEOUT_S", "10"))

    # Feature Configuration
    BLOCK_SIZE = int(os.getenv("DRIVEMON_BLOCK_SIZE", "20"))
    WINDOW_MS = int(os.getenv("DRIVEMON_WINDOW_MS", "5000"))

    # Analysis Configuration
    ALPHA = float(os.getenv("DRIVEMON_ALPHA", "0.05"))

    # Logging Configuration
    LOG_LEVEL = os.getenv("DRIVEMON_LOG_LEVEL", "INFO").upper()
    LOG_FILE = os.getenv("DRIVEMON_LOG_FILE")

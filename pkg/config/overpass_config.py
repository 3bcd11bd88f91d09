"""
Overpass API Configuration for the Road-Mask Tree Mapping Toolkit
"""

import os
from typing import Optional

import requests
from dotenv import load_dotenv

from config.settings import GEODATA_CONFIG

load_dotenv()

DEFAULT_ENDPOINT = 'https://overpass-api.de/api/interpreter'


class OverpassConfig:
    """Configuration class for Overpass API access"""

    def __init__(self):
        self.endpoint = os.getenv('OVERPASS_ENDPOINT', DEFAULT_ENDPOINT)
        self.timeout = float(os.getenv('OVERPASS_TIMEOUT', GEODATA_CONFIG['overpass_timeout']))
        self.user_agent = os.getenv('OVERPASS_USER_AGENT', 'roadmask-treemap/1.0')
        self._session: Optional[requests.Session] = None

    @property
    def session(self) -> requests.Session:
        """Lazily created HTTP session with the toolkit's headers"""
        if self._session is None:
            session = requests.Session()
            session.headers.update({
                'User-Agent': self.user_agent,
                'Accept': 'application/json'
            })
            self._session = session
        return self._session


# Global configuration instance
config = OverpassConfig()


def get_overpass_session() -> requests.Session:
    """Get the shared Overpass HTTP session"""
    return config.session


def get_overpass_endpoint() -> str:
    """Get the configured Overpass interpreter URL"""
    return config.endpoint
